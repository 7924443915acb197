use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::TrainError;
use crate::dataset::LabelRecord;

/// Moves `round(fraction * n)` random records of every class (at least one,
/// at most `n - 1`) to validation. Both outputs keep the input order.
pub fn stratified_val_split(
    records: &[LabelRecord],
    fraction: f64,
    seed: u64,
) -> Result<(Vec<LabelRecord>, Vec<LabelRecord>), TrainError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(TrainError::Config(format!("validation fraction must be in (0, 1), got {fraction}")));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        by_class.entry(r.class_index).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut is_val = vec![false; records.len()];
    for (class, mut idx) in by_class {
        let n = idx.len();
        if n < 2 {
            return Err(TrainError::Split(format!("class {class} has {n} record(s); at least 2 are required")));
        }
        let k = ((fraction * n as f64).round() as usize).clamp(1, n - 1);
        idx.shuffle(&mut rng);
        for &i in &idx[..k] {
            is_val[i] = true;
        }
    }
    let (val, train): (Vec<_>, Vec<_>) = records.iter().cloned().zip(is_val).partition(|(_, v)| *v);
    Ok((train.into_iter().map(|(r, _)| r).collect(), val.into_iter().map(|(r, _)| r).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Origin, Split};
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn records(sizes: &[usize]) -> Vec<LabelRecord> {
        let mut out = Vec::new();
        for (c, &n) in sizes.iter().enumerate() {
            for i in 0..n {
                out.push(LabelRecord::new(format!("c{c}_{i}"), c, Origin::Noisy, Split::Train));
            }
        }
        out
    }

    #[test]
    fn twenty_records_give_three() {
        let (train, val) = stratified_val_split(&records(&[20]), 0.15, 1).unwrap();
        assert_eq!((train.len(), val.len()), (17, 3));
    }

    #[test]
    fn recount_per_class() {
        let sizes: Vec<usize> = (51..=170).step_by(7).collect();
        let (_, val) = stratified_val_split(&records(&sizes), 0.15, 5).unwrap();
        for (c, &n) in sizes.iter().enumerate() {
            let got = val.iter().filter(|r| r.class_index == c).count();
            assert_eq!(got, (0.15 * n as f64).round() as usize, "class {c} of size {n}");
        }
    }

    #[test]
    fn singleton_class_is_named() {
        let err = stratified_val_split(&records(&[5, 1]), 0.15, 0).unwrap_err();
        assert!(matches!(&err, TrainError::Split(m) if m.contains("class 1")), "{err}");
    }

    #[test]
    fn seeded() {
        let r = records(&[30, 40]);
        assert_eq!(stratified_val_split(&r, 0.15, 7).unwrap(), stratified_val_split(&r, 0.15, 7).unwrap());
        assert_ne!(stratified_val_split(&r, 0.15, 7).unwrap().1, stratified_val_split(&r, 0.15, 8).unwrap().1);
    }

    proptest! {
        #[test]
        fn split_is_a_partition(sizes in proptest::collection::vec(2usize..40, 1..6), f in 0.05f64..0.9, seed in 0u64..100) {
            let r = records(&sizes);
            let (train, val) = stratified_val_split(&r, f, seed).unwrap();
            prop_assert_eq!(train.len() + val.len(), r.len());
            let a: HashSet<_> = train.iter().map(|x| x.clip_id.clone()).collect();
            let b: HashSet<_> = val.iter().map(|x| x.clip_id.clone()).collect();
            prop_assert!(a.is_disjoint(&b));
            for c in 0..sizes.len() {
                prop_assert!(val.iter().any(|x| x.class_index == c));
                prop_assert!(train.iter().any(|x| x.class_index == c));
            }
        }
    }
}
