//! The `hullforge` pipeline as library calls, one function per subcommand.
//!
//! Every command reads a [`PipelineConfig`] and writes its outputs under the
//! configured directories, so stages can be rerun independently.

pub mod commands;
pub mod config;

pub use commands::{cmd_eval, cmd_infer, cmd_mesh, cmd_pvh, cmd_synth, cmd_train, InferSummary, MeshSummary};
pub use config::PipelineConfig;

use hullforge::pvh::FusionMode;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] hullforge::Error),
}

impl CliError {
    /// Machine-readable tag printed as `error[<category>]`.
    pub fn category(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Core(e) => e.category(),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    /// Replaces the low-view camera subset.
    pub cameras: Option<Vec<usize>>,
    pub patch_size: Option<usize>,
    pub stride: Option<usize>,
    pub fusion: Option<FusionMode>,
    pub epochs: Option<usize>,
    pub iso: Option<f32>,
    pub threads: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut PipelineConfig) {
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(c) = &self.cameras {
            cfg.views.low = c.clone();
        }
        if let Some(n) = self.patch_size {
            cfg.patch.size = n;
        }
        if let Some(s) = self.stride {
            cfg.patch.stride = s;
        }
        if let Some(f) = self.fusion {
            cfg.fusion = f;
        }
        if let Some(e) = self.epochs {
            cfg.train.epochs = e;
        }
        if let Some(i) = self.iso {
            cfg.mesh.iso = Some(i);
        }
        if let Some(t) = self.threads {
            cfg.threads = Some(t);
        }
    }
}

/// Parses a camera list such as `0,1,4` or `0-3` (ranges inclusive).
pub fn parse_camera_list(text: &str) -> CliResult<Vec<usize>> {
    let bad = || CliError::Usage(format!("bad camera list {text:?}: expected e.g. 0,1 or 0-3"));
    let mut out = Vec::new();
    for part in text.split(',').map(str::trim) {
        if part.is_empty() {
            return Err(bad());
        }
        match part.split_once('-') {
            Some((a, b)) => {
                let a: usize = a.trim().parse().map_err(|_| bad())?;
                let b: usize = b.trim().parse().map_err(|_| bad())?;
                if b < a {
                    return Err(bad());
                }
                out.extend(a..=b);
            }
            None => out.push(part.parse().map_err(|_| bad())?),
        }
    }
    Ok(out)
}

/// Parses a half-open frame range `A..B`, or a single frame `A`.
pub fn parse_frame_range(text: &str) -> CliResult<std::ops::Range<usize>> {
    let bad = || CliError::Usage(format!("bad frame range {text:?}: expected A..B or A"));
    match text.split_once("..") {
        Some((a, b)) => {
            let a: usize = a.trim().parse().map_err(|_| bad())?;
            let b: usize = b.trim().parse().map_err(|_| bad())?;
            if b <= a {
                return Err(bad());
            }
            Ok(a..b)
        }
        None => {
            let a: usize = text.trim().parse().map_err(|_| bad())?;
            Ok(a..a + 1)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn camera_lists_accept_items_and_ranges() {
        assert_eq!(parse_camera_list("0,1").unwrap(), vec![0, 1]);
        assert_eq!(parse_camera_list("2-4,7").unwrap(), vec![2, 3, 4, 7]);
        for bad in ["", "a", "3-1", "1,,2"] {
            assert!(matches!(parse_camera_list(bad), Err(CliError::Usage(_))), "{bad}");
        }
    }

    #[test]
    fn frame_ranges_are_half_open() {
        assert_eq!(parse_frame_range("3..7").unwrap(), 3..7);
        assert_eq!(parse_frame_range("5").unwrap(), 5..6);
        assert!(parse_frame_range("7..3").is_err());
        assert!(parse_frame_range("x").is_err());
    }

    #[test]
    fn overrides_win_over_the_file() {
        let mut cfg = PipelineConfig::default();
        Overrides {
            seed: Some(99),
            cameras: Some(vec![2, 3]),
            stride: Some(8),
            epochs: Some(3),
            iso: Some(0.4),
            ..Default::default()
        }
        .apply(&mut cfg);
        assert_eq!(cfg.seed, 99);
        assert_eq!(cfg.views.low, vec![2, 3]);
        assert_eq!(cfg.patch.stride, 8);
        assert_eq!(cfg.patch.size, 32);
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.mesh.iso, Some(0.4));
    }

    #[test]
    fn categories_follow_the_core_error() {
        assert_eq!(CliError::Usage("x".into()).category(), "usage");
        let e: CliError = hullforge::Error::Shape("x".into()).into();
        assert_eq!(e.category(), "shape");
    }
}
