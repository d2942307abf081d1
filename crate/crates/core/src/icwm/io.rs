//! Versioned text format for trained parameters.
//!
//! ```text
//! icwm-params v<version>
//! digest <training digest hex>
//! feat <id> <feature name>
//! key <bundle digest> <code hash>
//! w <label> <id> <decimal>
//! b <label> <decimal>
//! ```
//!
//! Decimals carry enough significant digits for a bit-faithful round-trip at
//! the scalar's precision. `key` lines are the training manifest the
//! contamination check runs against.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::backends::OutcomeLabel;
use crate::icwm::features::{Vocabulary, STRUCTURAL_FEATURES};
use crate::icwm::objective::{Weights, LABEL_COUNT};
use crate::icwm::WorldModelParameters;
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum ParamsError {
    #[error("parameter file line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Error)]
pub enum SaveError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub fn to_file_string<S: Scalar>(params: &WorldModelParameters<S>) -> String {
    let mut out = String::new();
    out.push_str(&format!("icwm-params v{}\n", params.version));
    out.push_str(&format!("digest {}\n", params.training_digest));

    let mut features: Vec<(u32, &String)> =
        params.vocabulary.iter().map(|(name, id)| (id, name)).collect();
    features.sort_by_key(|(id, _)| *id);
    for (id, name) in features {
        out.push_str(&format!("feat {id} {name}\n"));
    }
    for key in &params.training_keys {
        out.push_str(&format!("key {key}\n"));
    }

    let feature_count = params.weights.feature_count;
    for label in OutcomeLabel::ALL {
        let base = label.index() * feature_count;
        for id in 0..feature_count {
            out.push_str(&format!(
                "w {} {} {}\n",
                label,
                id,
                params.weights.w[base + id].to_roundtrip_string()
            ));
        }
    }
    for label in OutcomeLabel::ALL {
        out.push_str(&format!(
            "b {} {}\n",
            label,
            params.weights.b[label.index()].to_roundtrip_string()
        ));
    }
    out
}

pub fn from_file_string<S: Scalar>(text: &str) -> Result<WorldModelParameters<S>, ParamsError> {
    let parse_err = |line: usize, message: String| ParamsError::Parse { line, message };
    let mut lines = text.lines().enumerate();

    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(1, "empty parameter file".to_string()))?;
    let version = header
        .strip_prefix("icwm-params v")
        .and_then(|v| v.parse::<u32>().ok())
        .ok_or_else(|| parse_err(1, format!("bad header `{header}`")))?;

    let mut training_digest = String::new();
    let mut vocab_entries: BTreeMap<String, u32> = BTreeMap::new();
    let mut training_keys: BTreeSet<String> = BTreeSet::new();
    let mut weight_entries: Vec<(usize, OutcomeLabel, usize, S)> = Vec::new();
    let mut bias_entries: Vec<(usize, OutcomeLabel, S)> = Vec::new();

    for (idx, raw) in lines {
        let line_no = idx + 1;
        let line = raw.trim_end();
        if line.is_empty() {
            continue;
        }
        let (kind, rest) = line
            .split_once(' ')
            .ok_or_else(|| parse_err(line_no, format!("bad line `{line}`")))?;
        match kind {
            "digest" => training_digest = rest.to_string(),
            "feat" => {
                let (id, name) = rest
                    .split_once(' ')
                    .ok_or_else(|| parse_err(line_no, "feat needs `<id> <name>`".to_string()))?;
                let id = id
                    .parse::<u32>()
                    .map_err(|_| parse_err(line_no, format!("bad feature id `{id}`")))?;
                if id < STRUCTURAL_FEATURES {
                    return Err(parse_err(
                        line_no,
                        format!("feature id {id} collides with structural features"),
                    ));
                }
                if vocab_entries.insert(name.to_string(), id).is_some() {
                    return Err(parse_err(line_no, format!("duplicate feature `{name}`")));
                }
            }
            "key" => {
                training_keys.insert(rest.to_string());
            }
            "w" => {
                let fields: Vec<&str> = rest.split(' ').collect();
                if fields.len() != 3 {
                    return Err(parse_err(line_no, "w needs `<label> <id> <value>`".to_string()));
                }
                let label = fields[0]
                    .parse::<OutcomeLabel>()
                    .map_err(|m| parse_err(line_no, m))?;
                let id = fields[1]
                    .parse::<usize>()
                    .map_err(|_| parse_err(line_no, format!("bad feature id `{}`", fields[1])))?;
                let value = fields[2]
                    .parse::<S>()
                    .map_err(|_| parse_err(line_no, format!("bad decimal `{}`", fields[2])))?;
                weight_entries.push((line_no, label, id, value));
            }
            "b" => {
                let (label, value) = rest
                    .split_once(' ')
                    .ok_or_else(|| parse_err(line_no, "b needs `<label> <value>`".to_string()))?;
                let label = label
                    .parse::<OutcomeLabel>()
                    .map_err(|m| parse_err(line_no, m))?;
                let value = value
                    .parse::<S>()
                    .map_err(|_| parse_err(line_no, format!("bad decimal `{value}`")))?;
                bias_entries.push((line_no, label, value));
            }
            other => return Err(parse_err(line_no, format!("unknown line kind `{other}`"))),
        }
    }

    let vocabulary = Vocabulary::from_entries(vocab_entries);
    let feature_count = vocabulary.feature_count();
    let mut weights = Weights::<S>::zeros(feature_count);
    for (line_no, label, id, value) in weight_entries {
        if id >= feature_count {
            return Err(parse_err(
                line_no,
                format!("feature id {id} out of range ({feature_count} features)"),
            ));
        }
        weights.w[label.index() * feature_count + id] = value;
    }
    for (_, label, value) in bias_entries {
        weights.b[label.index()] = value;
    }
    debug_assert_eq!(weights.w.len(), LABEL_COUNT * feature_count);

    Ok(WorldModelParameters {
        version,
        vocabulary,
        weights,
        training_digest,
        training_keys,
    })
}

pub fn save<S: Scalar>(params: &WorldModelParameters<S>, path: &Path) -> Result<(), SaveError> {
    fs::write(path, to_file_string(params)).map_err(|source| SaveError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load<S: Scalar>(path: &Path) -> Result<WorldModelParameters<S>, ParamsError> {
    let text = fs::read_to_string(path).map_err(|source| ParamsError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    from_file_string(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{Observation, ObservationSource};
    use crate::envstore::Domain;
    use crate::icwm::{train, BundleFeatures, TrainHyper, TrainingTurn};

    fn fixture_params() -> WorldModelParameters<f64> {
        let turns: Vec<TrainingTurn> = (0..10)
            .map(|i| TrainingTurn {
                domain: Domain::Reference,
                bundle_digest: "d".to_string(),
                bundle_features: BundleFeatures {
                    memory_budget: 8,
                    step_limit: 100,
                    artifact_count: 1,
                },
                code: format!("mem {}\nset 0 {i}\nout 0\n", if i % 2 == 0 { 16 } else { 8 }),
                true_observation: Observation {
                    label: if i % 2 == 0 {
                        OutcomeLabel::MemoryFault
                    } else {
                        OutcomeLabel::Pass
                    },
                    diagnostic: if i % 2 == 0 { "d".into() } else { String::new() },
                    numeric_outputs: None,
                    diff_summary: None,
                    wall_time_ms: 0,
                    source: ObservationSource::Real,
                },
            })
            .collect();
        train(&turns, &TrainHyper::default()).unwrap()
    }

    #[test]
    fn roundtrip_is_field_exact() {
        let params = fixture_params();
        let text = to_file_string(&params);
        let back: WorldModelParameters<f64> = from_file_string(&text).unwrap();
        assert_eq!(back, params);
    }

    #[test]
    fn two_serializations_are_byte_identical() {
        let params = fixture_params();
        let a = to_file_string(&params);
        let b = to_file_string(&from_file_string::<f64>(&a).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn header_carries_the_version() {
        let mut params = fixture_params();
        params.version = 12;
        let text = to_file_string(&params);
        assert!(text.starts_with("icwm-params v12\n"));
        assert_eq!(from_file_string::<f64>(&text).unwrap().version, 12);
    }

    #[test]
    fn bad_lines_are_reported_with_their_number() {
        let params = fixture_params();
        let mut text = to_file_string(&params);
        text.push_str("frobnicate 1 2\n");
        let last_line = text.lines().count();
        match from_file_string::<f64>(&text) {
            Err(ParamsError::Parse { line, .. }) => assert_eq!(line, last_line),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn bad_header_is_line_one() {
        match from_file_string::<f64>("not-a-params-file\n") {
            Err(ParamsError::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn save_load_through_the_filesystem() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("icwm.params");
        let params = fixture_params();
        save(&params, &path).unwrap();
        let back: WorldModelParameters<f64> = load(&path).unwrap();
        assert_eq!(back, params);
    }
}
