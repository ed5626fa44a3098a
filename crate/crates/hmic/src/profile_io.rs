//! Stain profile serialization: six basis entries plus two percentiles, as
//! JSON.

use std::path::Path;

use serde::{Deserialize, Serialize};

use hmic_core::stain::StainProfile;

use crate::error::{PipelineError, Result};

#[derive(Debug, Serialize, Deserialize)]
struct ProfileFile {
    stain_matrix: [[f64; 2]; 3],
    concentration_p99: [f64; 2],
}

pub fn save_profile(profile: &StainProfile, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| PipelineError::io(parent, e))?;
    }
    let file = ProfileFile {
        stain_matrix: profile.stain_matrix,
        concentration_p99: profile.concentration_p99,
    };
    let json = serde_json::to_string_pretty(&file)
        .map_err(|e| PipelineError::format(path, format!("profile serialization: {e}")))?;
    std::fs::write(path, json).map_err(|e| PipelineError::io(path, e))?;
    Ok(())
}

pub fn load_profile(path: &Path) -> Result<StainProfile> {
    let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
    let file: ProfileFile = serde_json::from_str(&text)
        .map_err(|e| PipelineError::format(path, format!("profile parse: {e}")))?;
    StainProfile::new(file.stain_matrix, file.concentration_p99).map_err(PipelineError::from)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profile_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("target.json");
        let n = |v: [f64; 3]| {
            let m = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            [v[0] / m, v[1] / m, v[2] / m]
        };
        let h = n([0.65, 0.70, 0.29]);
        let e = n([0.07, 0.99, 0.11]);
        let profile = StainProfile::new(
            [[h[0], e[0]], [h[1], e[1]], [h[2], e[2]]],
            [1.4, 0.9],
        )
        .unwrap();
        save_profile(&profile, &path).unwrap();
        let loaded = load_profile(&path).unwrap();
        assert_eq!(loaded, profile);
    }

    #[test]
    fn invalid_profile_is_rejected_at_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        std::fs::write(
            &path,
            r#"{"stain_matrix":[[2.0,0.0],[0.0,1.0],[0.0,0.0]],"concentration_p99":[1.0,1.0]}"#,
        )
        .unwrap();
        assert!(load_profile(&path).is_err());
    }
}
