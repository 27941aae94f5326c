use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{PairingMode, SupervisionMode};
use crate::error::{Error, Result};
use crate::frame::VideoSequence;

/// Position of a frame: video index and frame index within it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FrameRef {
    pub video: usize,
    pub frame: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FramePair {
    pub a: FrameRef,
    pub b: FrameRef,
}

pub fn make_pairs(videos: &[VideoSequence], mode: PairingMode, stride: usize, seed: u64) -> Result<Vec<FramePair>> {
    let lengths: Vec<usize> = videos.iter().map(VideoSequence::len).collect();
    make_pairs_for_lengths(&lengths, mode, stride, seed)
}

/// Pairs over videos with the given frame counts.
///
/// Random mode draws as many pairs as adjacent mode would produce at stride 1.
pub fn make_pairs_for_lengths(lengths: &[usize], mode: PairingMode, stride: usize, seed: u64) -> Result<Vec<FramePair>> {
    let total: usize = lengths.iter().sum();
    if lengths.is_empty() || total == 0 {
        return Err(Error::Empty("no frames to pair".into()));
    }
    if stride == 0 {
        return Err(Error::InvalidArgument("pair stride must be at least 1".into()));
    }
    match mode {
        PairingMode::Adjacent => {
            let shortest = *lengths.iter().min().expect("non-empty");
            if stride >= shortest {
                return Err(Error::InvalidArgument(format!(
                    "stride {stride} must be below the shortest video length {shortest}"
                )));
            }
            Ok(lengths
                .iter()
                .enumerate()
                .flat_map(|(v, &len)| {
                    (0..len - stride).map(move |t| FramePair {
                        a: FrameRef { video: v, frame: t },
                        b: FrameRef { video: v, frame: t + stride },
                    })
                })
                .collect())
        }
        PairingMode::Random => {
            if total < 2 {
                return Err(Error::InvalidArgument("random pairing needs at least two frames".into()));
            }
            let refs: Vec<FrameRef> = lengths
                .iter()
                .enumerate()
                .flat_map(|(v, &len)| (0..len).map(move |t| FrameRef { video: v, frame: t }))
                .collect();
            let count = (total - lengths.len()).max(1);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Ok((0..count)
                .map(|_| {
                    let i = rng.gen_range(0..total);
                    let mut j = rng.gen_range(0..total - 1);
                    if j >= i {
                        j += 1;
                    }
                    let (a, b) = if i < j { (i, j) } else { (j, i) };
                    FramePair { a: refs[a], b: refs[b] }
                })
                .collect())
        }
    }
}

/// Frame indices that use ground-truth anchors: none, every even index, or all.
pub fn select_supervised_frames(video: &VideoSequence, mode: SupervisionMode) -> BTreeSet<usize> {
    supervised_indices(video.len(), mode)
}

pub(crate) fn supervised_indices(len: usize, mode: SupervisionMode) -> BTreeSet<usize> {
    match mode {
        SupervisionMode::None => BTreeSet::new(),
        SupervisionMode::Half => (0..len).step_by(2).collect(),
        SupervisionMode::Full => (0..len).collect(),
    }
}

pub(crate) fn shuffled<T: Clone>(items: &[T], seed: u64) -> Vec<T> {
    let mut out = items.to_vec();
    out.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn adjacent_examples() {
        let p = make_pairs_for_lengths(&[5], PairingMode::Adjacent, 1, 0).unwrap();
        let t: Vec<(usize, usize)> = p.iter().map(|p| (p.a.frame, p.b.frame)).collect();
        assert_eq!(t, vec![(0, 1), (1, 2), (2, 3), (3, 4)]);
        assert_eq!(make_pairs_for_lengths(&[5], PairingMode::Adjacent, 2, 0).unwrap().len(), 3);
        assert!(make_pairs_for_lengths(&[5, 2], PairingMode::Adjacent, 2, 0).is_err());
        assert!(make_pairs_for_lengths(&[], PairingMode::Adjacent, 1, 0).is_err());
        assert!(make_pairs_for_lengths(&[5], PairingMode::Adjacent, 0, 0).is_err());
    }

    #[test]
    fn random_is_seeded() {
        let a = make_pairs_for_lengths(&[6, 7], PairingMode::Random, 1, 11).unwrap();
        let b = make_pairs_for_lengths(&[6, 7], PairingMode::Random, 1, 11).unwrap();
        let c = make_pairs_for_lengths(&[6, 7], PairingMode::Random, 1, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.iter().all(|p| p.a < p.b));
    }

    #[test]
    fn supervision_subsets() {
        let v: Vec<usize> = supervised_indices(6, SupervisionMode::Half).into_iter().collect();
        assert_eq!(v, vec![0, 2, 4]);
        assert_eq!(supervised_indices(6, SupervisionMode::Full).len(), 6);
        assert!(supervised_indices(6, SupervisionMode::None).is_empty());
    }

    proptest! {
        #[test]
        fn adjacent_pairs_stay_inside_videos(
            lengths in prop::collection::vec(3usize..12, 1..5), stride in 1usize..3,
        ) {
            let pairs = make_pairs_for_lengths(&lengths, PairingMode::Adjacent, stride, 0).unwrap();
            prop_assert_eq!(pairs.len(), lengths.iter().map(|l| l - stride).sum::<usize>());
            for p in pairs {
                prop_assert_eq!(p.a.video, p.b.video);
                prop_assert_eq!(p.b.frame, p.a.frame + stride);
                prop_assert!(p.b.frame < lengths[p.b.video]);
            }
        }
    }
}
