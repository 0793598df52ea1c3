use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;

use dynfield::data::{
    atomic_write, load_dataset, synth_scene, write_dataset, write_dataset_into, write_depth_dir, write_dir_atomically,
    Dataset, LoadOptions, SynthSceneSpec, TimeRule,
};
use dynfield::export::{backproject, write_ply, write_png};
use dynfield::fields::FieldParams;
use dynfield::metrics::evaluate;
use dynfield::raster::{DepthMap, RgbImage};
use dynfield::refinement::{box_to_mask, FrameBox};
use dynfield::rendering::{render_frame, SampleMode};
use dynfield::training::{
    initial_params, load_model, refine_dataset, save_model, train_with, LogRecord, ModelCheckpoint, TrainConfig,
    TrainError, TrainObserver,
};
use dynfield::diffcore::AdamState;

use crate::error::CliError;
use crate::{DataArgs, EvalArgs, ExportArgs, RefineArgs, RenderArgs, SynthArgs, TimeRuleArg, TrainArgs};

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    Ok(atomic_write(path, text.as_bytes())?)
}

/// Fails early when `path` could not be created later.
fn check_writable(path: &Path) -> Result<(), CliError> {
    let parent = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    if parent.is_dir() {
        Ok(())
    } else {
        Err(CliError::io(format!("output directory {} does not exist", parent.display())))
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn time_rule(arg: Option<TimeRuleArg>, fallback: TimeRule) -> TimeRule {
    match arg {
        Some(TimeRuleArg::IndexOverCount) => TimeRule::IndexOverCount,
        Some(TimeRuleArg::Span) => TimeRule::Span,
        None => fallback,
    }
}

fn load_data(args: &DataArgs, need_masks: bool, fallback_rule: TimeRule) -> Result<Dataset, CliError> {
    let options = LoadOptions {
        time_rule: time_rule(args.time_rule, fallback_rule),
        require_masks: need_masks && args.boxes.is_none(),
    };
    let mut ds = load_dataset(&args.data, &options)?;
    if let Some(path) = &args.boxes {
        let boxes: Vec<FrameBox> = read_json(path)?;
        let (w, h) = (ds.camera.width, ds.camera.height);
        for b in boxes {
            let frame = ds
                .frames
                .get_mut(b.frame.wrapping_sub(1))
                .ok_or_else(|| CliError::config(format!("box for unknown frame {}", b.frame)))?;
            if frame.mask.is_none() {
                frame.mask = Some(box_to_mask(b.bounds, w, h)?);
            }
        }
    }
    ds.validate()?;
    Ok(ds)
}

pub fn synth(args: SynthArgs, seed: Option<u64>) -> Result<(), CliError> {
    let spec: SynthSceneSpec = match &args.spec {
        Some(p) => read_json(p)?,
        None => SynthSceneSpec::default(),
    };
    spec.validate()?;
    let out = synth_scene(&spec, &mut ChaCha8Rng::seed_from_u64(seed.unwrap_or(0)))?;
    write_dir_atomically(&args.out, |dir| {
        write_dataset_into(&out.dataset, dir)?;
        write_depth_dir(&dir.join("oracle_depth"), &out.oracle_depths)?;
        let text = serde_json::to_string_pretty(&spec).expect("spec serializes");
        fs::write(dir.join("spec.json"), text).map_err(|source| dynfield::data::DataError::Io {
            path: dir.join("spec.json"),
            source,
        })
    })?;
    eprintln!("wrote {} frames to {}", out.dataset.len(), args.out.display());
    Ok(())
}

struct Progress<'a> {
    out: &'a Path,
    template: ModelCheckpoint,
}

impl TrainObserver for Progress<'_> {
    fn record(&mut self, r: &LogRecord) {
        eprintln!("iter {:>6}  color {:.6}  depth {:.6}", r.iteration, r.color_loss, r.depth_loss);
    }

    fn checkpoint(&mut self, iteration: usize, params: &FieldParams, adam: &[AdamState; 2]) -> Result<(), TrainError> {
        let ckpt = ModelCheckpoint {
            iteration,
            params: params.clone(),
            adam: Some(adam.clone()),
            ..self.template.clone()
        };
        save_model(self.out, &ckpt)
    }
}

pub fn train(args: TrainArgs, seed: Option<u64>) -> Result<(), CliError> {
    let mut config: TrainConfig = match &args.config {
        Some(p) => read_json(p)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = seed {
        config.seed = s;
    }
    if let Some(v) = args.iterations {
        config.iterations = v;
    }
    if let Some(v) = args.batch_rays {
        config.batch_rays = v;
    }
    if let Some(v) = args.samples {
        config.samples_per_ray = v;
    }
    if let Some(v) = args.lr {
        config.adam.learning_rate = v;
    }
    if let Some(v) = args.alpha {
        config.refine.alpha = v;
    }
    if let Some(v) = args.refine_at {
        config.refine.trigger_iteration = v;
    }
    if args.no_refine {
        config.refine.enabled = false;
    }
    config.validate()?;
    let log_path = args.log.clone().unwrap_or_else(|| with_suffix(&args.out, ".log.tsv"));
    check_writable(&args.out)?;
    check_writable(&log_path)?;

    let rule = time_rule(args.data.time_rule, TimeRule::default());
    let dataset = load_data(&args.data, config.refine.enabled, rule)?;
    let params = initial_params(&config);
    let mut progress = Progress {
        out: &args.out,
        template: ModelCheckpoint {
            model: config.model,
            camera: dataset.camera.clone(),
            frames: dataset.len(),
            time_rule: rule,
            iteration: 0,
            params: params.clone(),
            adam: None,
        },
    };
    let outcome = train_with(&config, dataset, params, &mut progress)?;
    write_text(&log_path, &outcome.log.to_tsv())?;
    write_text(&with_suffix(&log_path, ".timing"), &outcome.log.timing_tsv())?;
    if let Some(dir) = &args.refined_depth {
        write_dir_atomically(dir, |tmp| write_depth_dir(tmp, &outcome.depths))?;
    }
    eprintln!("wrote {} and {}", args.out.display(), log_path.display());
    Ok(())
}

fn check_time(t: f64) -> Result<(), CliError> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(CliError::config(format!("--t {t} outside [0, 1]")))
    }
}

fn render_ckpt(ckpt: &ModelCheckpoint, t: f64, samples: usize) -> Result<(RgbImage, DepthMap), CliError> {
    Ok(render_frame(&ckpt.params, &ckpt.camera, t, samples, SampleMode::Midpoint, 0)?)
}

pub fn render(args: RenderArgs) -> Result<(), CliError> {
    check_time(args.t)?;
    let ext = args.out.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
    if !matches!(ext.as_deref(), Some("png" | "pfm")) {
        return Err(CliError::config("--out must end in .png or .pfm"));
    }
    check_writable(&args.out)?;
    let ckpt = load_model(&args.ckpt)?;
    let (image, depth) = render_ckpt(&ckpt, args.t, args.samples)?;
    if ext.as_deref() == Some("png") {
        write_png(&image, &args.out)?;
    } else {
        atomic_write(&args.out, &dynfield::data::encode_depth_pfm(&depth))?;
    }
    if let Some(p) = &args.depth_out {
        atomic_write(p, &dynfield::data::encode_depth_pfm(&depth))?;
    }
    Ok(())
}

pub fn refine(args: RefineArgs) -> Result<(), CliError> {
    if !(0.0..=1.0).contains(&args.alpha) {
        return Err(CliError::config(format!("--alpha {} outside [0, 1]", args.alpha)));
    }
    let ckpt = load_model(&args.ckpt)?;
    let mut ds = load_data(&args.data, true, ckpt.time_rule)?;
    let event = refine_dataset(&ckpt.params, &mut ds, args.samples, args.alpha, ckpt.iteration)?;
    write_dataset(&ds, &args.out)?;
    let (fg, bg) = event.replaced.iter().fold((0, 0), |a, r| (a.0 + r.0, a.1 + r.1));
    eprintln!("replaced {fg} tool and {bg} tissue depths; wrote {}", args.out.display());
    Ok(())
}

pub fn eval(args: EvalArgs) -> Result<(), CliError> {
    check_writable(&args.out)?;
    let ckpt = load_model(&args.ckpt)?;
    let options = LoadOptions {
        time_rule: ckpt.time_rule,
        require_masks: false,
    };
    let ds = load_dataset(&args.data, &options)?;
    let report = evaluate(&ckpt.params, &ds, args.samples, args.frames.as_deref())?;
    write_text(&args.out, &report.to_tsv(&args.label))?;
    eprintln!("PSNR {:.3} dB  SSIM {:.4}", report.psnr, report.ssim);
    Ok(())
}

pub fn export_cloud(args: ExportArgs) -> Result<(), CliError> {
    check_time(args.t)?;
    check_writable(&args.out)?;
    let ckpt = load_model(&args.ckpt)?;
    let (image, depth) = render_ckpt(&ckpt, args.t, args.samples)?;
    let cloud = backproject(&image, &depth, &ckpt.camera)?;
    write_ply(&cloud, &args.out)?;
    eprintln!("wrote {} points to {}", cloud.points.len(), args.out.display());
    Ok(())
}
