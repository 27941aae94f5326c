use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::pairs::shuffled;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub fold_id: usize,
    pub train_videos: Vec<String>,
    pub test_videos: Vec<String>,
}

/// Seeded partition of the videos into `n_folds` equally sized test sets.
pub fn make_folds(video_ids: &[String], n_folds: usize, seed: u64) -> Result<Vec<FoldSplit>> {
    check_unique(video_ids)?;
    if n_folds == 0 || video_ids.is_empty() || video_ids.len() % n_folds != 0 {
        return Err(Error::InvalidArgument(format!(
            "{} videos cannot be split into {n_folds} equal folds; supply an explicit split table",
            video_ids.len()
        )));
    }
    let order = shuffled(video_ids, seed);
    let per = video_ids.len() / n_folds;
    let table: Vec<Vec<String>> = order.chunks(per).map(<[String]>::to_vec).collect();
    folds_from_table(video_ids, &table)
}

/// Builds folds from explicit test-video lists, which must partition `video_ids`.
pub fn folds_from_table(video_ids: &[String], table: &[Vec<String>]) -> Result<Vec<FoldSplit>> {
    check_unique(video_ids)?;
    let all: BTreeSet<&String> = video_ids.iter().collect();
    let mut seen = BTreeSet::new();
    for test in table {
        if test.is_empty() {
            return Err(Error::InvalidArgument("a fold has no test videos".into()));
        }
        for id in test {
            if !all.contains(id) {
                return Err(Error::InvalidArgument(format!("split table names unknown video {id:?}")));
            }
            if !seen.insert(id) {
                return Err(Error::InvalidArgument(format!("video {id:?} is in more than one test set")));
            }
        }
    }
    if seen.len() != all.len() {
        let missing: Vec<&&String> = all.difference(&seen).collect();
        return Err(Error::InvalidArgument(format!("videos missing from every test set: {missing:?}")));
    }
    Ok(table
        .iter()
        .enumerate()
        .map(|(fold_id, test)| FoldSplit {
            fold_id,
            train_videos: video_ids.iter().filter(|v| !test.contains(v)).cloned().collect(),
            test_videos: test.clone(),
        })
        .collect())
}

fn check_unique(video_ids: &[String]) -> Result<()> {
    let set: BTreeSet<&String> = video_ids.iter().collect();
    if set.len() != video_ids.len() {
        return Err(Error::InvalidArgument("duplicate video ids".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (1..=n).map(|i| format!("video_{i}")).collect()
    }

    #[test]
    fn eight_videos_four_folds_partition() {
        let v = ids(8);
        let folds = make_folds(&v, 4, 3).unwrap();
        assert_eq!(folds.len(), 4);
        let mut tested: Vec<String> = folds.iter().flat_map(|f| f.test_videos.clone()).collect();
        tested.sort();
        let mut expected = v.clone();
        expected.sort();
        assert_eq!(tested, expected);
        for f in &folds {
            assert_eq!(f.test_videos.len(), 2);
            assert_eq!(f.train_videos.len(), 6);
            assert!(f.train_videos.iter().all(|t| !f.test_videos.contains(t)));
        }
        assert_eq!(folds, make_folds(&v, 4, 3).unwrap());
    }

    #[test]
    fn indivisible_count_needs_a_table() {
        assert!(make_folds(&ids(7), 4, 0).is_err());
        let table = vec![
            vec!["video_1".to_string(), "video_2".to_string()],
            vec!["video_3".to_string()],
            vec!["video_4".to_string(), "video_5".to_string()],
            vec!["video_6".to_string(), "video_7".to_string()],
        ];
        let folds = folds_from_table(&ids(7), &table).unwrap();
        let back: Vec<Vec<String>> = folds.iter().map(|f| f.test_videos.clone()).collect();
        assert_eq!(back, table);
    }

    #[test]
    fn bad_tables_are_rejected() {
        let v = ids(4);
        let overlap = vec![vec!["video_1".into(), "video_2".into()], vec!["video_2".into(), "video_3".into(), "video_4".into()]];
        assert!(folds_from_table(&v, &overlap).is_err());
        let missing = vec![vec!["video_1".into()], vec!["video_2".into()]];
        assert!(folds_from_table(&v, &missing).is_err());
        let unknown = vec![vec!["video_9".into()]];
        assert!(folds_from_table(&v, &unknown).is_err());
    }
}
