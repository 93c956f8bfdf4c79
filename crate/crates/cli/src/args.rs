use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

#[derive(Debug, Parser)]
#[command(name = "gnt", version, about = "Generalizable neural rendering toolchain")]
pub struct Cli {
    /// JSON object of flag values; flags given on the command line win.
    #[arg(long, global = true, value_name = "FILE")]
    pub config_file: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic scene and render a ring of ground-truth views.
    MakeDataset(MakeDatasetArgs),
    /// Train a model on a dataset directory.
    Train(TrainArgs),
    /// Render one view from the remaining views of a dataset.
    Render(RenderArgs),
    /// Render held-out views and report image metrics.
    Eval(EvalArgs),
    /// Write the view-importance and attention-depth maps of one view.
    AttnViz(AttnVizArgs),
    /// Verify every backward rule against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args, Serialize, Deserialize)]
pub struct MakeDatasetArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_views: Option<usize>,
    /// Number of primitives.
    #[arg(long)]
    pub prims: Option<usize>,
    /// Image size as WxH, or one number for square images.
    #[arg(long)]
    pub dims: Option<String>,
    /// flat, lambertian or specular.
    #[arg(long)]
    pub shading: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Ring radius in scene units.
    #[arg(long)]
    pub radius: Option<f64>,
    /// Ring elevation in radians.
    #[arg(long)]
    pub elevation: Option<f64>,
    /// Horizontal field of view in degrees.
    #[arg(long)]
    pub fov: Option<f64>,
}

#[derive(Debug, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Optimization preset: desk or paper.
    #[arg(long)]
    pub preset: Option<String>,
    /// Model preset: desk, tiny, single-scene or generalization.
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Rays per optimizer step.
    #[arg(long)]
    pub rays: Option<usize>,
    /// gnt, volumetric or gnt-ar.
    #[arg(long)]
    pub renderer: Option<String>,
    #[arg(long)]
    pub blocks: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Coarse samples per training ray.
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub lr_encoder: Option<f64>,
    #[arg(long)]
    pub lr_gnt: Option<f64>,
    /// Comma-separated views excluded from training.
    #[arg(long, value_delimiter = ',')]
    pub holdout: Option<Vec<usize>>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    #[arg(long)]
    pub shards: Option<usize>,
}

#[derive(Debug, Args, Serialize, Deserialize)]
pub struct RenderArgs {
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub view: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the attention depth map.
    #[arg(long)]
    pub depth: Option<PathBuf>,
    /// Extra attention-guided samples per ray.
    #[arg(long)]
    pub fine: Option<usize>,
    #[command(flatten)]
    #[serde(flatten)]
    pub view_opts: ViewOpts,
}

#[derive(Debug, Args, Serialize, Deserialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Comma-separated views to render and score.
    #[arg(long, value_delimiter = ',')]
    pub holdout: Option<Vec<usize>>,
    /// JSON array (holdout order) or object keyed by view of LPIPS values.
    #[arg(long)]
    pub lpips_file: Option<PathBuf>,
    #[arg(long)]
    pub fine: Option<usize>,
    /// Score the ground-truth images against themselves; no checkpoint needed.
    #[arg(long)]
    pub gt_self: bool,
    #[command(flatten)]
    #[serde(flatten)]
    pub view_opts: ViewOpts,
}

#[derive(Debug, Args, Serialize, Deserialize)]
pub struct AttnVizArgs {
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub view: Option<usize>,
    #[arg(long)]
    pub out_prefix: Option<String>,
    #[command(flatten)]
    #[serde(flatten)]
    pub view_opts: ViewOpts,
}

/// Sampling and source selection shared by the rendering commands.
#[derive(Debug, Args, Serialize, Deserialize)]
pub struct ViewOpts {
    /// Coarse samples per ray; defaults to the training value.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Source views, nearest in viewing direction first.
    #[arg(long)]
    pub sources: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args, Serialize, Deserialize)]
pub struct GradcheckArgs {
    /// Model preset to check.
    #[arg(long)]
    pub config: Option<String>,
    #[arg(long)]
    pub tolerance: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Fills every flag left unset from the JSON object in `file`.
pub fn merge_config<T: Serialize + DeserializeOwned>(args: T, file: Option<&Path>) -> Result<T, CliError> {
    let Some(path) = file else {
        return Ok(args);
    };
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let parsed: Value =
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let Value::Object(entries) = parsed else {
        return Err(CliError::Usage(format!("{}: expected a JSON object", path.display())));
    };
    let mut current = serde_json::to_value(&args).expect("arguments serialize");
    let slots = current.as_object_mut().expect("arguments are a struct");
    for (key, value) in entries {
        let key = key.replace('-', "_");
        match slots.get_mut(&key) {
            None => return Err(CliError::Usage(format!("{}: unknown option {key:?}", path.display()))),
            Some(slot) if slot.is_null() || *slot == Value::Bool(false) => *slot = value,
            Some(_) => {}
        }
    }
    serde_json::from_value(current).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

pub fn required<T>(v: Option<T>, flag: &str) -> Result<T, CliError> {
    v.ok_or_else(|| CliError::Usage(format!("missing required flag --{flag}")))
}

/// `W`x`H` or a single side length.
pub fn parse_dims(s: &str) -> Result<(usize, usize), CliError> {
    let bad = || CliError::Usage(format!("--dims expects WxH or N, got {s:?}"));
    let parse = |t: &str| t.trim().parse::<usize>().map_err(|_| bad());
    match s.split_once(['x', 'X']) {
        Some((w, h)) => Ok((parse(w)?, parse(h)?)),
        None => {
            let n = parse(s)?;
            Ok((n, n))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dims_forms() {
        assert_eq!(parse_dims("32x24").unwrap(), (32, 24));
        assert_eq!(parse_dims("16").unwrap(), (16, 16));
        assert!(parse_dims("a").is_err());
        assert!(parse_dims("3x").is_err());
    }

    #[test]
    fn file_fills_only_unset_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"steps": 7, "rays": 9, "lr-gnt": 0.1, "holdout": [2, 3]}"#).unwrap();
        let args = TrainArgs {
            data: None,
            out: None,
            preset: None,
            model: None,
            steps: Some(3),
            rays: None,
            renderer: None,
            blocks: None,
            dim: None,
            seed: None,
            samples: None,
            lr_encoder: None,
            lr_gnt: None,
            holdout: None,
            checkpoint_every: None,
            shards: None,
        };
        let merged = merge_config(args, Some(&path)).unwrap();
        assert_eq!(merged.steps, Some(3));
        assert_eq!(merged.rays, Some(9));
        assert_eq!(merged.lr_gnt, Some(0.1));
        assert_eq!(merged.holdout, Some(vec![2, 3]));
    }

    #[test]
    fn unknown_file_keys_are_usage_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"bogus": 1}"#).unwrap();
        let args = GradcheckArgs {
            config: None,
            tolerance: None,
            seed: None,
        };
        assert!(matches!(merge_config(args, Some(&path)), Err(CliError::Usage(_))));
    }
}
