use std::collections::BTreeMap;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use gnt_core::data::{generate_scene, make_dataset, read_dataset, write_dataset, Dataset, RingConfig, Shading};
use gnt_core::gradsuite::{run_gradcheck_suite, SuiteOptions};
use gnt_core::image::{write_pfm, write_ppm, Image};
use gnt_core::imagefeat::EncoderConfig;
use gnt_core::metrics::{EvalReport, MetricReport, ViewMetrics};
use gnt_core::model::{load_checkpoint, GntConfig, RendererKind};
use gnt_core::params::ParamStore;
use gnt_core::parallel::{thread_pool, worker_threads};
use gnt_core::render::{render_view, view_importance, SamplerConfig};
use gnt_core::train::{train_loop, TrainConfig, Trainer};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::args::{
    merge_config, parse_dims, required, AttnVizArgs, Cli, Command, EvalArgs, GradcheckArgs, MakeDatasetArgs,
    RenderArgs, TrainArgs, ViewOpts,
};
use crate::CliError;

/// Effective configuration of a training run, written next to its checkpoints.
pub const RUN_FILE: &str = "run.json";

/// View-importance colors, indexed by dataset view modulo 12.
pub const PALETTE: [[u8; 3]; 12] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [127, 127, 127],
    [188, 189, 34],
    [23, 190, 207],
    [174, 199, 232],
    [255, 187, 120],
];

const DEFAULT_SOURCES: usize = 4;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunRecord {
    pub data: PathBuf,
    pub model: GntConfig,
    pub train: TrainConfig,
}

pub fn dispatch(cli: Cli) -> Result<(), CliError> {
    let pool = thread_pool(worker_threads())?;
    let file = cli.config_file.as_deref();
    pool.install(|| match cli.command {
        Command::MakeDataset(a) => make_dataset_cmd(merge_config(a, file)?),
        Command::Train(a) => train_cmd(merge_config(a, file)?),
        Command::Render(a) => render_cmd(merge_config(a, file)?),
        Command::Eval(a) => eval_cmd(merge_config(a, file)?),
        Command::AttnViz(a) => attn_viz_cmd(merge_config(a, file)?),
        Command::Gradcheck(a) => gradcheck_cmd(merge_config(a, file)?),
    })
}

fn print_json(v: &impl Serialize) {
    println!("{}", serde_json::to_string_pretty(v).expect("report serializes"));
}

fn make_dataset_cmd(a: MakeDatasetArgs) -> Result<(), CliError> {
    let out = required(a.out, "out")?;
    let seed = a.seed.unwrap_or(0);
    let n_views = a.n_views.unwrap_or(12);
    let prims = a.prims.unwrap_or(3);
    let (w, h) = parse_dims(a.dims.as_deref().unwrap_or("32x32"))?;
    let shading_name = a.shading.unwrap_or_else(|| "lambertian".into());
    let shading = match shading_name.as_str() {
        "flat" => Shading::Flat,
        "lambertian" => Shading::Lambertian,
        "specular" => Shading::Specular {
            strength: 0.5,
            shininess: 32.0,
        },
        other => return Err(CliError::Usage(format!("unknown shading {other:?}; use flat, lambertian or specular"))),
    };
    if n_views < 2 {
        return Err(CliError::Usage(format!("--n-views must be 2 or more, got {n_views}")));
    }
    let mut scene = generate_scene(seed, prims)?;
    scene.shading = shading;
    let mut ring = RingConfig::new(n_views, w, h);
    ring.radius = a.radius.unwrap_or(ring.radius);
    ring.elevation = a.elevation.unwrap_or(ring.elevation);
    ring.fov_deg = a.fov.unwrap_or(ring.fov_deg);
    let ds = make_dataset(&scene, &ring)?;
    write_dataset(&ds, &out)?;
    print_json(&json!({
        "out": out,
        "seed": seed,
        "n_views": ds.len(),
        "width": w,
        "height": h,
        "primitives": prims,
        "shading": shading_name,
        "near": ds.near,
        "far": ds.far,
    }));
    Ok(())
}

fn model_preset(name: &str) -> Result<GntConfig, CliError> {
    match name {
        "desk" => Ok(GntConfig::desk()),
        "tiny" => Ok(GntConfig::tiny()),
        "single-scene" => Ok(GntConfig::single_scene()),
        "generalization" => Ok(GntConfig::generalization()),
        other => Err(CliError::Usage(format!(
            "unknown model preset {other:?}; use desk, tiny, single-scene or generalization"
        ))),
    }
}

fn renderer(name: &str) -> Result<RendererKind, CliError> {
    RendererKind::parse(name)
        .ok_or_else(|| CliError::Usage(format!("unknown renderer {name:?}; use gnt, volumetric or gnt-ar")))
}

fn train_cmd(a: TrainArgs) -> Result<(), CliError> {
    let data = required(a.data, "data")?;
    let out = required(a.out, "out")?;
    let ds = read_dataset(&data)?;

    let mut model = model_preset(a.model.as_deref().unwrap_or("desk"))?;
    if let Some(r) = &a.renderer {
        model.renderer = renderer(r)?;
    }
    if let Some(b) = a.blocks {
        model.n_blocks = b;
    }
    if let Some(d) = a.dim {
        model.dim = d;
        model.ffn_hidden = 2 * d;
        model.volumetric_hidden = d;
        model.encoder = EncoderConfig {
            out_dim: d,
            ..model.encoder
        };
    }
    let mut cfg = match a.preset.as_deref().unwrap_or("desk") {
        "desk" => TrainConfig::desk(),
        "paper" => TrainConfig::paper(),
        other => return Err(CliError::Usage(format!("unknown training preset {other:?}; use desk or paper"))),
    };
    cfg.total_steps = a.steps.unwrap_or(cfg.total_steps);
    cfg.rays_per_step = a.rays.unwrap_or(cfg.rays_per_step);
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    cfg.n_samples = a.samples.unwrap_or(cfg.n_samples);
    cfg.lr_encoder = a.lr_encoder.unwrap_or(cfg.lr_encoder);
    cfg.lr_gnt = a.lr_gnt.unwrap_or(cfg.lr_gnt);
    cfg.checkpoint_every = a.checkpoint_every.unwrap_or(cfg.checkpoint_every);
    cfg.shards = a.shards.unwrap_or(cfg.shards);
    if let Some(h) = a.holdout {
        if let Some(bad) = h.iter().find(|&&v| v >= ds.len()) {
            return Err(CliError::Usage(format!("held-out view {bad} not in a dataset of {} views", ds.len())));
        }
        cfg.held_out = h;
    }

    let mut trainer = Trainer::new(&ds, model.clone(), cfg.clone(), None)?;
    trainer.dump_dir = Some(out.clone());
    fs::create_dir_all(&out).map_err(|e| CliError::Usage(format!("{}: {e}", out.display())))?;
    let record = RunRecord {
        data: data.clone(),
        model,
        train: cfg,
    };
    write_text(&out.join(RUN_FILE), &serde_json::to_string_pretty(&record).expect("run record serializes"))?;
    let log_path = out.join("log.jsonl");
    let file = fs::File::create(&log_path).map_err(|e| CliError::Usage(format!("{}: {e}", log_path.display())))?;
    let mut log = BufWriter::new(file);
    log::info!(
        "training {} for {} steps on {} views",
        record.model.renderer.name(),
        record.train.total_steps,
        ds.len() - record.train.held_out.len()
    );
    let history = train_loop(&mut trainer, Some(&mut log), Some(&out))?;
    std::io::Write::flush(&mut log).map_err(|e| CliError::Usage(format!("{}: {e}", log_path.display())))?;
    let last = history.last();
    print_json(&json!({
        "out": out,
        "steps": trainer.step_index(),
        "final_loss": last.map(|l| l.loss),
        "wallclock_ms": last.map(|l| l.wallclock_ms),
    }));
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

/// A trained model with the sampling defaults of its run.
struct Loaded {
    model: GntConfig,
    params: ParamStore<f32>,
    train_samples: Option<usize>,
}

fn load(ckpt: &Path) -> Result<Loaded, CliError> {
    let (manifest, params) = load_checkpoint(ckpt)?;
    let run = ckpt.join(RUN_FILE);
    let train_samples = match fs::read_to_string(&run) {
        Ok(text) => {
            let rec: RunRecord =
                serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", run.display())))?;
            Some(rec.train.n_samples)
        }
        Err(_) => None,
    };
    Ok(Loaded {
        model: manifest.config,
        params,
        train_samples,
    })
}

fn sampler(ds: &Dataset, loaded: Option<&Loaded>, opts: &ViewOpts, fine: usize) -> Result<SamplerConfig, CliError> {
    let base = SamplerConfig::new(ds.near, ds.far);
    let n_samples = opts
        .samples
        .or_else(|| loaded.and_then(|l| l.train_samples))
        .unwrap_or(base.n_samples);
    if n_samples == 0 {
        return Err(CliError::Usage("--samples must be positive".into()));
    }
    Ok(SamplerConfig {
        n_samples,
        n_fine: fine,
        seed: opts.seed.unwrap_or(0),
        ..base
    })
}

fn check_finite(img: &Image, what: &str) -> Result<(), CliError> {
    if img.data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(CliError::Numeric(format!("{what} contains non-finite pixels")))
    }
}

fn render_cmd(a: RenderArgs) -> Result<(), CliError> {
    let ckpt = required(a.ckpt, "ckpt")?;
    let data = required(a.data, "data")?;
    let view = required(a.view, "view")?;
    let out = required(a.out, "out")?;
    let ds = read_dataset(&data)?;
    if view >= ds.len() {
        return Err(CliError::Usage(format!("view {view} not in a dataset of {} views", ds.len())));
    }
    let loaded = load(&ckpt)?;
    let smp = sampler(&ds, Some(&loaded), &a.view_opts, a.fine.unwrap_or(0))?;
    let others: Vec<usize> = (0..ds.len()).filter(|&v| v != view).collect();
    let n_src = a.view_opts.sources.unwrap_or(DEFAULT_SOURCES);
    let (rendered, ids) = render_view(&loaded.model, &loaded.params, &ds, view, &others, n_src, &smp, false)?;
    check_finite(&rendered.image, "rendered image")?;
    write_ppm(&out, &rendered.image)?;
    if let Some(d) = &a.depth {
        write_pfm(d, &rendered.depth)?;
    }
    print_json(&json!({ "view": view, "sources": ids, "samples": smp.n_samples, "fine": smp.n_fine, "out": out }));
    Ok(())
}

fn lpips_values(path: &Path, holdout: &[usize]) -> Result<Vec<f64>, CliError> {
    let bad = |m: String| CliError::Usage(format!("{}: {m}", path.display()));
    let text = fs::read_to_string(path).map_err(|e| bad(e.to_string()))?;
    let v: Value = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
    match v {
        Value::Array(items) => {
            let vals: Vec<f64> = serde_json::from_value(Value::Array(items)).map_err(|e| bad(e.to_string()))?;
            if vals.len() != holdout.len() {
                return Err(bad(format!("{} values for {} held-out views", vals.len(), holdout.len())));
            }
            Ok(vals)
        }
        Value::Object(_) => {
            let map: BTreeMap<String, f64> = serde_json::from_value(v).map_err(|e| bad(e.to_string()))?;
            holdout
                .iter()
                .map(|h| map.get(&h.to_string()).copied().ok_or_else(|| bad(format!("no value for view {h}"))))
                .collect()
        }
        _ => Err(bad("expected a JSON array or object".into())),
    }
}

fn eval_cmd(a: EvalArgs) -> Result<(), CliError> {
    let data = required(a.data, "data")?;
    let holdout = required(a.holdout, "holdout")?;
    let ds = read_dataset(&data)?;
    if holdout.is_empty() {
        return Err(CliError::Usage("--holdout needs at least one view".into()));
    }
    if let Some(bad) = holdout.iter().find(|&&v| v >= ds.len()) {
        return Err(CliError::Usage(format!("held-out view {bad} not in a dataset of {} views", ds.len())));
    }
    let lpips = match &a.lpips_file {
        Some(p) => Some(lpips_values(p, &holdout)?),
        None => None,
    };
    let loaded = if a.gt_self { None } else { Some(load(&required(a.ckpt, "ckpt")?)?) };
    let train_views: Vec<usize> = (0..ds.len()).filter(|v| !holdout.contains(v)).collect();
    let smp = sampler(&ds, loaded.as_ref(), &a.view_opts, a.fine.unwrap_or(0))?;
    let n_src = a.view_opts.sources.unwrap_or(DEFAULT_SOURCES);
    let mut views = Vec::with_capacity(holdout.len());
    for (i, &view) in holdout.iter().enumerate() {
        let truth = &ds.images[view];
        let lp = lpips.as_ref().map(|l| l[i]);
        let metrics = match &loaded {
            None => MetricReport::compare(truth, truth, lp)?,
            Some(l) => {
                let (r, _) = render_view(&l.model, &l.params, &ds, view, &train_views, n_src, &smp, false)?;
                check_finite(&r.image, "rendered image")?;
                MetricReport::compare(&r.image, truth, lp)?
            }
        };
        views.push(ViewMetrics { view, metrics });
    }
    print_json(&EvalReport::new(views)?);
    Ok(())
}

fn attn_viz_cmd(a: AttnVizArgs) -> Result<(), CliError> {
    let ckpt = required(a.ckpt, "ckpt")?;
    let data = required(a.data, "data")?;
    let view = required(a.view, "view")?;
    let prefix = required(a.out_prefix, "out-prefix")?;
    let ds = read_dataset(&data)?;
    if view >= ds.len() {
        return Err(CliError::Usage(format!("view {view} not in a dataset of {} views", ds.len())));
    }
    let loaded = load(&ckpt)?;
    let smp = sampler(&ds, Some(&loaded), &a.view_opts, 0)?;
    let others: Vec<usize> = (0..ds.len()).filter(|&v| v != view).collect();
    let n_src = a.view_opts.sources.unwrap_or(DEFAULT_SOURCES);
    let (rendered, ids) = render_view(&loaded.model, &loaded.params, &ds, view, &others, n_src, &smp, true)?;
    let records = rendered.records.unwrap_or_default();
    let mut map = Image::filled(ds.width(), ds.height(), &[0.0, 0.0, 0.0]);
    let mut counts = vec![0usize; ids.len()];
    for (i, rec) in records.iter().enumerate() {
        if let Ok(slot) = view_importance(rec) {
            counts[slot] += 1;
            let color = PALETTE[ids[slot] % PALETTE.len()];
            let px = &mut map.data[3 * i..3 * i + 3];
            for c in 0..3 {
                px[c] = color[c] as f32 / 255.0;
            }
        }
    }
    let imp = PathBuf::from(format!("{prefix}_viewimportance.ppm"));
    let depth = PathBuf::from(format!("{prefix}_depth.pfm"));
    write_ppm(&imp, &map)?;
    write_pfm(&depth, &rendered.depth)?;
    let share: Vec<Value> = ids
        .iter()
        .zip(&counts)
        .map(|(v, c)| json!({ "view": v, "color": PALETTE[v % PALETTE.len()], "pixels": c }))
        .collect();
    print_json(&json!({ "view": view, "sources": share, "importance": imp, "depth": depth }));
    Ok(())
}

fn gradcheck_cmd(a: GradcheckArgs) -> Result<(), CliError> {
    let name = a.config.unwrap_or_else(|| "tiny".into());
    let model = model_preset(&name)?;
    let defaults = SuiteOptions::default();
    let opts = SuiteOptions {
        tolerance: a.tolerance.unwrap_or(defaults.tolerance),
        seed: a.seed.unwrap_or(defaults.seed),
        ..defaults
    };
    let report = run_gradcheck_suite(&model, &opts)?;
    print_json(&report);
    let worst = report
        .groups
        .iter()
        .max_by(|x, y| x.max_rel_err.total_cmp(&y.max_rel_err))
        .ok_or_else(|| CliError::Numeric("gradient suite checked nothing".into()))?;
    let line = format!(
        "worst: {} ({:?} under {}) max relative error {:.3e}",
        worst.worst,
        worst.group,
        worst.renderer.name(),
        worst.max_rel_err
    );
    if report.passed() {
        eprintln!("{line}; all groups below {:.0e}", opts.tolerance);
        Ok(())
    } else {
        Err(CliError::Numeric(format!("gradient check failed; {line}")))
    }
}
