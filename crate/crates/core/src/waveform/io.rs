//! Dataset directory layout: `manifest.json` plus one CSV per instance.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{DatasetManifest, SyntheticDataset, WaveformInstance, CHANNEL_COUNT};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const WAVEFORM_HEADER: &str = "t,Va,Vb,Vc,Ia,Ib,Ic";

/// Renders one instance as CSV. `sample_rate_hz` only feeds the `t` column.
pub(crate) fn waveform_csv(instance: &WaveformInstance, sample_rate_hz: f64) -> String {
    let mut out = String::with_capacity(instance.sample_count() * 7 * 22);
    out.push_str(WAVEFORM_HEADER);
    out.push('\n');
    for i in 0..instance.sample_count() {
        write!(out, "{}", i as f64 / sample_rate_hz).unwrap();
        for c in &instance.channels {
            write!(out, ",{}", c[i]).unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn write_dataset(dataset: &SyntheticDataset, directory: &Path) -> Result<()> {
    let sample_rate_hz = dataset.manifest.sample_rate_hz;
    for (entry, inst) in dataset.manifest.entries.iter().zip(&dataset.instances) {
        let path = directory.join(&entry.path);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)
                .map_err(|e| Error::io(format!("creating {}", parent.display()), e))?;
        }
        fs::write(&path, waveform_csv(inst, sample_rate_hz))
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    }
    let manifest = serde_json::to_string_pretty(&dataset.manifest)
        .map_err(|e| Error::json("serializing manifest", e))?;
    let path = directory.join(MANIFEST_FILE);
    fs::write(&path, manifest + "\n").map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn read_manifest(directory: &Path) -> Result<DatasetManifest> {
    let path = directory.join(MANIFEST_FILE);
    if !path.exists() {
        return Err(Error::MissingFile(path));
    }
    let text =
        fs::read_to_string(&path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let manifest: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| Error::json(format!("parsing {}", path.display()), e))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Parse {
            file: path,
            row: 0,
            column: 0,
            message: format!("unsupported format version {}", manifest.format_version),
        });
    }
    let mut seen = std::collections::BTreeSet::new();
    for e in &manifest.entries {
        if !seen.insert(&e.instance_id) {
            return Err(Error::Contract(format!("duplicate instance id {}", e.instance_id)));
        }
    }
    Ok(manifest)
}

/// Reads every instance listed in the manifest, in manifest order.
pub fn read_dataset(directory: &Path) -> Result<(DatasetManifest, Vec<WaveformInstance>)> {
    let manifest = read_manifest(directory)?;
    for e in &manifest.entries {
        let path = directory.join(&e.path);
        if !path.is_file() {
            return Err(Error::MissingFile(path));
        }
    }
    let instances = manifest
        .entries
        .iter()
        .map(|e| {
            let path = directory.join(&e.path);
            let channels = read_waveform_csv(&path)?;
            WaveformInstance::new(e.instance_id.clone(), e.label, channels)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, instances))
}

fn parse_error(file: &Path, row: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        file: file.to_path_buf(),
        row,
        column,
        message: message.into(),
    }
}

/// Rows and columns in errors are 1-based; the header is row 1.
pub(crate) fn read_waveform_csv(path: &Path) -> Result<[Vec<f64>; CHANNEL_COUNT]> {
    let text =
        fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    parse_waveform_csv(&text, path)
}

pub(crate) fn parse_waveform_csv(text: &str, path: &Path) -> Result<[Vec<f64>; CHANNEL_COUNT]> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| parse_error(path, 1, 1, "empty file"))?;
    let expected: Vec<&str> = WAVEFORM_HEADER.split(',').collect();
    let got: Vec<&str> = header.split(',').map(str::trim).collect();
    if got != expected {
        let column = expected
            .iter()
            .zip(&got)
            .position(|(a, b)| a != b)
            .unwrap_or(expected.len().min(got.len()))
            + 1;
        return Err(parse_error(
            path,
            1,
            column,
            format!("expected header `{WAVEFORM_HEADER}`, found `{header}`"),
        ));
    }

    let mut channels: [Vec<f64>; CHANNEL_COUNT] = Default::default();
    for (i, line) in lines.enumerate() {
        let row = i + 2;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != CHANNEL_COUNT + 1 {
            return Err(parse_error(
                path,
                row,
                fields.len().min(CHANNEL_COUNT + 1) + 1,
                format!("expected {} fields, found {}", CHANNEL_COUNT + 1, fields.len()),
            ));
        }
        for (col, field) in fields.iter().enumerate() {
            let value: f64 = field.trim().parse().map_err(|_| {
                parse_error(path, row, col + 1, format!("`{field}` is not a number"))
            })?;
            if !value.is_finite() {
                return Err(parse_error(path, row, col + 1, "non-finite value"));
            }
            if col > 0 {
                channels[col - 1].push(value);
            }
        }
    }
    if channels[0].len() < 2 {
        return Err(parse_error(path, 2, 1, "need at least two samples"));
    }
    Ok(channels)
}

#[cfg(test)]
mod tests {
    use std::path::PathBuf;

    use super::*;
    use crate::waveform::{synth_dataset, Channel, FaultClass, SynthParams};

    #[test]
    fn header_matches_channel_order() {
        let cols: Vec<_> = Channel::ALL.iter().map(|c| c.column_name()).collect();
        let cols = cols.join(",");
        assert_eq!(WAVEFORM_HEADER, format!("t,{cols}"));
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = SynthParams {
            sample_count: 300,
            seed: 9,
            ..SynthParams::default()
        };
        let ds = synth_dataset(&p, 1).unwrap();
        write_dataset(&ds, dir.path()).unwrap();
        let (manifest, back) = read_dataset(dir.path()).unwrap();
        assert_eq!(manifest, ds.manifest);
        assert_eq!(back, ds.instances);
    }

    #[test]
    fn missing_instance_file_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let p = SynthParams {
            sample_count: 50,
            ..SynthParams::default()
        };
        let ds = synth_dataset(&p, 1).unwrap();
        write_dataset(&ds, dir.path()).unwrap();
        let victim = dir.path().join(&ds.manifest.entries[3].path);
        fs::remove_file(&victim).unwrap();
        match read_dataset(dir.path()) {
            Err(Error::MissingFile(path)) => assert_eq!(path, victim),
            other => panic!("expected missing file, got {other:?}"),
        }
    }

    #[test]
    fn wrong_channel_order_is_rejected() {
        let text = "t,Va,Vb,Vc,Ib,Ia,Ic\n0,1,2,3,4,5,6\n0.1,1,2,3,4,5,6\n";
        match parse_waveform_csv(text, Path::new("x.csv")) {
            Err(Error::Parse { row, column, .. }) => assert_eq!((row, column), (1, 5)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_cell_reports_row_and_column() {
        let text = format!("{WAVEFORM_HEADER}\n0,1,2,3,4,5,6\n0.1,1,2,oops,4,5,6\n");
        match parse_waveform_csv(&text, Path::new("x.csv")) {
            Err(Error::Parse { row, column, file, .. }) => {
                assert_eq!((row, column), (3, 4));
                assert_eq!(file, PathBuf::from("x.csv"));
            }
            other => panic!("{other:?}"),
        }
        let short = format!("{WAVEFORM_HEADER}\n0,1,2,3\n");
        assert!(matches!(
            parse_waveform_csv(&short, Path::new("x.csv")),
            Err(Error::Parse { row: 2, .. })
        ));
    }

    #[test]
    fn labels_survive_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let p = SynthParams {
            sample_count: 20,
            ..SynthParams::default()
        };
        let ds = synth_dataset(&p, 2).unwrap();
        write_dataset(&ds, dir.path()).unwrap();
        let m = read_manifest(dir.path()).unwrap();
        assert_eq!(m.per_class_count[&FaultClass::CG], 2);
        let text = fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
        assert!(text.contains("\"label\": \"CAG\""));
    }
}
