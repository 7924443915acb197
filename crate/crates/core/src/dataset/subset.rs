use std::collections::{HashMap, HashSet};

use super::{DatasetError, DatasetManifest, LabelRecord, Origin, Split, Subset};

/// Restricts a manifest to one training subset. Test records are dropped.
///
/// `NoisySmall` uses the manifest's `noisy_small` column when any record
/// carries it. Otherwise, for every class it takes the shortest prefix of
/// that class's noisy records (file order) whose total duration is closest
/// to the class's clean duration, and marks the chosen records so that
/// selecting again is a no-op.
pub fn select_subset(manifest: &DatasetManifest, subset: Subset) -> Result<DatasetManifest, DatasetError> {
    let train = manifest.train_records();
    let records: Vec<LabelRecord> = match subset {
        Subset::All => train.cloned().collect(),
        Subset::Clean => train.filter(|r| r.origin == Origin::Clean).cloned().collect(),
        Subset::Noisy => train.filter(|r| r.origin == Origin::Noisy).cloned().collect(),
        Subset::NoisySmall => noisy_small(manifest)?,
    };
    if records.is_empty() {
        return Err(DatasetError::EmptySubset(subset));
    }
    Ok(DatasetManifest {
        records,
        class_names: manifest.class_names.clone(),
        audio_root: manifest.audio_root.clone(),
    })
}

fn noisy_small(manifest: &DatasetManifest) -> Result<Vec<LabelRecord>, DatasetError> {
    let is_train_noisy = |r: &&LabelRecord| r.split == Split::Train && r.origin == Origin::Noisy;

    if manifest.records.iter().any(|r| r.noisy_small.is_some()) {
        return Ok(manifest
            .records
            .iter()
            .filter(is_train_noisy)
            .filter(|r| r.noisy_small == Some(true))
            .cloned()
            .collect());
    }

    let duration = |r: &LabelRecord| r.duration.ok_or_else(|| DatasetError::MissingDuration(r.clip_id.clone()));

    let mut clean_budget: HashMap<usize, f64> = HashMap::new();
    for r in manifest.train_records().filter(|r| r.origin == Origin::Clean) {
        *clean_budget.entry(r.class_index).or_default() += duration(r)?;
    }

    let mut chosen: HashSet<&str> = HashSet::new();
    for class in 0..manifest.n_classes() {
        let budget = clean_budget.get(&class).copied().unwrap_or(0.0);
        let candidates: Vec<&LabelRecord> = manifest
            .records
            .iter()
            .filter(is_train_noisy)
            .filter(|r| r.class_index == class)
            .collect();
        let mut best_len = 0;
        let mut best_gap = budget;
        let mut total = 0.0;
        for (i, r) in candidates.iter().enumerate() {
            total += duration(r)?;
            let gap = (total - budget).abs();
            if gap < best_gap {
                best_gap = gap;
                best_len = i + 1;
            }
        }
        chosen.extend(candidates[..best_len].iter().map(|r| r.clip_id.as_str()));
    }

    Ok(manifest
        .records
        .iter()
        .filter(|r| chosen.contains(r.clip_id.as_str()))
        .map(|r| LabelRecord {
            noisy_small: Some(true),
            ..r.clone()
        })
        .collect())
}
