use std::collections::{BTreeSet, HashSet};
use std::fs::File;
use std::path::Path;

use super::{DatasetError, DatasetManifest, LabelRecord, Origin, Split};

const REQUIRED: [&str; 4] = ["fname", "label", "manually_verified", "split"];

/// Loads a CSV manifest with columns `fname,label,manually_verified,split`
/// and the optional columns `noisy_small` and `duration`.
///
/// Class names are the sorted distinct labels; records keep file order.
pub fn load_manifest(
    path: impl AsRef<Path>,
    audio_root: impl AsRef<Path>,
) -> Result<DatasetManifest, DatasetError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let headers = reader.headers()?.clone();
    let column = |name: &str| headers.iter().position(|h| h.trim() == name);

    let mut idx = [0usize; 4];
    for (slot, name) in idx.iter_mut().zip(REQUIRED) {
        *slot = column(name).ok_or_else(|| DatasetError::MissingColumn(name.to_string()))?;
    }
    let [fname_col, label_col, verified_col, split_col] = idx;
    let noisy_small_col = column("noisy_small");
    let duration_col = column("duration");

    let mut rows = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        let line = i + 2;
        let field = |col: usize| row.get(col).unwrap_or("").trim();
        let invalid = |col: usize, name: &str| DatasetError::InvalidValue {
            row: line,
            column: name.to_string(),
            value: field(col).to_string(),
        };

        let fname = field(fname_col);
        if fname.is_empty() {
            return Err(invalid(fname_col, "fname"));
        }
        let label = field(label_col);
        if label.is_empty() {
            return Err(invalid(label_col, "label"));
        }
        let origin = match field(verified_col) {
            "1" => Origin::Clean,
            "0" => Origin::Noisy,
            _ => return Err(invalid(verified_col, "manually_verified")),
        };
        let split: Split = field(split_col)
            .parse()
            .map_err(|_| invalid(split_col, "split"))?;
        let noisy_small = match noisy_small_col.map(field) {
            None | Some("") => None,
            Some("1") => Some(true),
            Some("0") => Some(false),
            Some(_) => return Err(invalid(noisy_small_col.unwrap(), "noisy_small")),
        };
        let duration = match duration_col.map(field) {
            None | Some("") => None,
            Some(v) => match v.parse::<f64>() {
                Ok(d) if d > 0.0 && d.is_finite() => Some(d),
                _ => return Err(invalid(duration_col.unwrap(), "duration")),
            },
        };
        rows.push((fname.to_string(), label.to_string(), origin, split, noisy_small, duration));
    }

    let mut seen = HashSet::with_capacity(rows.len());
    for (fname, ..) in &rows {
        if !seen.insert(fname.as_str()) {
            return Err(DatasetError::Duplicate(fname.clone()));
        }
    }

    let train_labels: BTreeSet<&str> = rows
        .iter()
        .filter(|r| r.3 == Split::Train)
        .map(|r| r.1.as_str())
        .collect();
    if !train_labels.is_empty() {
        if let Some(r) = rows
            .iter()
            .find(|r| r.3 == Split::Test && !train_labels.contains(r.1.as_str()))
        {
            return Err(DatasetError::Consistency(format!(
                "test clip `{}` has label `{}` which never occurs in the train split",
                r.0, r.1
            )));
        }
    }

    let class_names: Vec<String> = rows
        .iter()
        .map(|r| r.1.as_str())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .map(str::to_string)
        .collect();

    let records = rows
        .into_iter()
        .map(|(fname, label, origin, split, noisy_small, duration)| LabelRecord {
            class_index: class_names.binary_search(&label).expect("label collected above"),
            clip_id: fname,
            origin,
            split,
            noisy_small,
            duration,
        })
        .collect();

    DatasetManifest::new(records, class_names, audio_root.as_ref())
}

/// Writes a manifest in the format read by [`load_manifest`]. The
/// `noisy_small` and `duration` columns are written only when at least one
/// record carries them.
pub fn write_manifest(manifest: &DatasetManifest, path: impl AsRef<Path>) -> Result<(), DatasetError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let with_small = manifest.records.iter().any(|r| r.noisy_small.is_some());
    let with_duration = manifest.records.iter().any(|r| r.duration.is_some());

    let mut writer = csv::Writer::from_writer(file);
    let mut header = REQUIRED.to_vec();
    if with_small {
        header.push("noisy_small");
    }
    if with_duration {
        header.push("duration");
    }
    writer.write_record(&header)?;
    for r in &manifest.records {
        let mut row = vec![
            r.clip_id.clone(),
            manifest.class_names[r.class_index].clone(),
            match r.origin {
                Origin::Clean => "1".into(),
                Origin::Noisy => "0".into(),
            },
            r.split.to_string(),
        ];
        if with_small {
            row.push(match r.noisy_small {
                Some(true) => "1".into(),
                Some(false) => "0".into(),
                None => String::new(),
            });
        }
        if with_duration {
            row.push(r.duration.map(|d| format!("{d}")).unwrap_or_default());
        }
        writer.write_record(&row)?;
    }
    writer.flush().map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn manifest_file(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn header_only_gives_empty_manifest() {
        let f = manifest_file("fname,label,manually_verified,split\n");
        let m = load_manifest(f.path(), "audio").unwrap();
        assert_eq!(m.len(), 0);
        assert_eq!(m.n_classes(), 0);
    }

    #[test]
    fn duplicate_fname_is_rejected() {
        let f = manifest_file(
            "fname,label,manually_verified,split\n\
             a.wav,Rain,1,train\n\
             b.wav,Wind,0,train\n\
             a.wav,Wind,0,train\n",
        );
        match load_manifest(f.path(), "audio") {
            Err(DatasetError::Duplicate(id)) => assert_eq!(id, "a.wav"),
            other => panic!("expected duplicate error, got {other:?}"),
        }
    }

    #[test]
    fn missing_column_is_named() {
        let f = manifest_file("fname,label,split\na.wav,Rain,train\n");
        match load_manifest(f.path(), "audio") {
            Err(DatasetError::MissingColumn(c)) => assert_eq!(c, "manually_verified"),
            other => panic!("expected missing column, got {other:?}"),
        }
    }

    #[test]
    fn test_only_label_is_inconsistent() {
        let f = manifest_file(
            "fname,label,manually_verified,split\n\
             a.wav,Rain,1,train\n\
             b.wav,Glass,1,test\n",
        );
        assert!(matches!(
            load_manifest(f.path(), "audio"),
            Err(DatasetError::Consistency(_))
        ));
    }

    #[test]
    fn classes_are_sorted_and_order_is_kept() {
        let f = manifest_file(
            "fname,label,manually_verified,split,duration\n\
             z.wav,Wind,0,train,1.5\n\
             a.wav,Rain,1,train,2\n\
             m.wav,Wind,1,test,3\n",
        );
        let m = load_manifest(f.path(), "audio").unwrap();
        assert_eq!(m.class_names, vec!["Rain", "Wind"]);
        let ids: Vec<_> = m.records.iter().map(|r| r.clip_id.as_str()).collect();
        assert_eq!(ids, ["z.wav", "a.wav", "m.wav"]);
        assert_eq!(m.records[0].class_index, 1);
        assert_eq!(m.records[0].origin, Origin::Noisy);
        assert_eq!(m.records[2].split, Split::Test);
        assert_eq!(m.records[1].duration, Some(2.0));
    }

    #[test]
    fn write_then_load_preserves_records() {
        let f = manifest_file(
            "fname,label,manually_verified,split,noisy_small\n\
             a.wav,Rain,0,train,1\n\
             b.wav,Wind,1,train,\n\
             c.wav,Rain,1,test,0\n",
        );
        let m = load_manifest(f.path(), "root").unwrap();
        let out = tempfile::NamedTempFile::new().unwrap();
        write_manifest(&m, out.path()).unwrap();
        let back = load_manifest(out.path(), "root").unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn released_split_sizes_validate() {
        let mut csv = String::from("fname,label,manually_verified,split\n");
        for i in 0..17_585 {
            let verified = usize::from(i % 10 == 0);
            csv.push_str(&format!("{i}.wav,class{:02},{verified},train\n", i % 20));
        }
        for i in 0..947 {
            csv.push_str(&format!("t{i}.wav,class{:02},1,test\n", i % 20));
        }
        let f = manifest_file(&csv);
        let m = load_manifest(f.path(), "audio").unwrap();
        assert_eq!(m.len(), 18_532);
        assert_eq!(m.train_records().count(), 17_585);
        assert_eq!(m.test_records().count(), 947);
        m.validate_fsdnoisy18k_counts().unwrap();
    }
}
