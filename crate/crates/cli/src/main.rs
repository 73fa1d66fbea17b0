//! `signpose`: command-line front end to the template-vertex sign pipeline.
//!
//! Exit status is 0 on success, 1 on a usage error and 2 on a data error.
//! Errors are reported on stderr as a single JSON object.

use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use signpose_core::anchors::generate_default_boxes;
use signpose_core::augment::{augment_dataset, prune_unusable, AugmentSample};
use signpose_core::detector::Detection;
use signpose_core::evalkit::{evaluate, map_vs_iou_sweep, sweep_to_csv};
use signpose_core::harness::{
    detect_file, generate_synthetic_dataset, oracle_predict, oracle_predict_crop_resize, read_sidecar, render_image,
    write_sidecar, Config, DatasetFile, DetectionFile, PredictionFile, View,
};
use signpose_core::mapsim::{rows_to_csv, run_experiment};
use signpose_core::refine::{refine_boundary, GrayPatch, RefineOutcome};
use signpose_core::templates::TemplateSet;
use signpose_core::{AABox, Error as CoreError, Point2};

#[derive(Parser, Debug)]
#[command(name = "signpose", version, about = "Template-vertex traffic sign detection toolkit")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// JSON configuration file; missing sections use defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every randomized step, overriding the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output path; stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Shape templates.
    Templates {
        #[command(subcommand)]
        action: TemplatesAction,
    },
    /// Default boxes.
    Anchors {
        #[command(subcommand)]
        action: AnchorsAction,
    },
    /// Generate a synthetic annotated dataset.
    Synth {
        /// Also write one grayscale PGM per image into this directory.
        #[arg(long)]
        render_dir: Option<PathBuf>,
    },
    /// Fabricate network outputs from annotations (stand-in for the CNN).
    PredictOracle {
        /// Annotation file.
        #[arg(long)]
        gt: PathBuf,
        /// Per-coordinate Gaussian noise on predicted vertices, pixels.
        #[arg(long)]
        sigma: Option<f64>,
        /// Predict the crop and half-resolution views instead of the full frame.
        #[arg(long)]
        crop_resize: bool,
        /// Store records as little-endian f32 in this file instead of the JSON.
        #[arg(long)]
        sidecar: Option<PathBuf>,
    },
    /// Decode predictions, suppress duplicates and recover sign boundaries.
    Detect {
        /// Prediction file.
        #[arg(long)]
        pred: PathBuf,
        /// Merge crop and half-resolution views.
        #[arg(long)]
        crop_resize: bool,
    },
    /// Refine detected boundaries against image gradients.
    Refine {
        /// Detection file.
        #[arg(long)]
        dets: PathBuf,
        /// Directory holding `<image id>.pgm`.
        #[arg(long)]
        images: PathBuf,
    },
    /// Precision/recall, AP/mAP and average vertex error.
    Eval {
        /// Detection file.
        #[arg(long)]
        pred: PathBuf,
        /// Annotation file.
        #[arg(long)]
        gt: PathBuf,
        /// Emit the mAP-vs-IoU CSV instead of the JSON report.
        #[arg(long)]
        sweep: bool,
    },
    /// Perspective augmentation of images with a large sign.
    Augment {
        /// Annotation file.
        #[arg(long)]
        gt: PathBuf,
        /// Drop unusable source images (difficult or border-touching signs) first.
        #[arg(long)]
        prune: bool,
    },
    /// Two-view mapping accuracy simulation (CSV).
    Mapsim {
        /// Trials per grid point, overriding the configuration.
        #[arg(long)]
        trials: Option<usize>,
    },
}

#[derive(Subcommand, Debug)]
enum TemplatesAction {
    /// Write the builtin template set as JSON.
    Dump,
}

#[derive(Subcommand, Debug)]
enum AnchorsAction {
    /// Write every default box of the configured grid as JSON.
    Gen,
}

/// Failure of a run, mapped to an exit status.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Data { kind: String, message: String },
}

impl From<CoreError> for Failure {
    fn from(e: CoreError) -> Self {
        Failure::Data {
            kind: e.kind().to_string(),
            message: e.to_string(),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        CoreError::Io(e).into()
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        CoreError::Json(e).into()
    }
}

fn data(kind: &str, message: impl Into<String>) -> Failure {
    Failure::Data {
        kind: kind.to_string(),
        message: message.into(),
    }
}

fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| data("Io", format!("{}: {e}", path.display())))
}

fn load_config(g: &Global) -> Result<Config, Failure> {
    let cfg = match &g.config {
        Some(p) => Config::from_json(&read_text(p)?)?,
        None => Config::default(),
    };
    Ok(match g.seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

fn load_dataset(path: &Path) -> Result<DatasetFile, Failure> {
    Ok(DatasetFile::from_json(&read_text(path)?)?)
}

fn write_output(g: &Global, bytes: &[u8]) -> Result<(), Failure> {
    match &g.out {
        Some(p) => fs::write(p, bytes).map_err(|e| data("Io", format!("{}: {e}", p.display()))),
        None => {
            let mut out = io::stdout().lock();
            match out.write_all(bytes).and_then(|_| out.flush()) {
                // a closed downstream pipe (`| head`) is not a failure
                Err(e) if e.kind() != io::ErrorKind::BrokenPipe => Err(e.into()),
                _ => Ok(()),
            }
        }
    }
}

fn write_json<T: Serialize>(g: &Global, value: &T) -> Result<(), Failure> {
    let mut text = serde_json::to_vec_pretty(value)?;
    text.push(b'\n');
    write_output(g, &text)
}

#[derive(Serialize)]
struct AnchorDump {
    grid_spec: signpose_core::GridSpec,
    box_count: usize,
    boxes: Vec<signpose_core::DefaultBox>,
}

#[derive(Serialize)]
struct AugmentTrace {
    id: String,
    source: String,
    homography: signpose_core::Homography,
    sampled_corners: signpose_core::Quad,
    rejected_draws: usize,
}

/// Augmented annotations; readable as a plain annotation file.
#[derive(Serialize)]
struct AugmentOutput {
    images: Vec<signpose_core::harness::DatasetImage>,
    trace: Vec<AugmentTrace>,
    skipped: Vec<Skipped>,
}

#[derive(Serialize)]
struct Skipped {
    id: String,
    reason: String,
}

#[derive(Serialize)]
struct RefineReport {
    images: Vec<signpose_core::harness::ImageDetections>,
    outcomes: Vec<Vec<RefineOutcome>>,
}

fn run(cli: Cli) -> Result<(), Failure> {
    let g = &cli.global;
    let cfg = load_config(g)?;
    match cli.command {
        Command::Templates {
            action: TemplatesAction::Dump,
        } => write_json(g, &TemplateSet::default()),
        Command::Anchors {
            action: AnchorsAction::Gen,
        } => {
            let boxes = generate_default_boxes(&cfg.grid_spec)?;
            write_json(
                g,
                &AnchorDump {
                    grid_spec: cfg.grid_spec.clone(),
                    box_count: boxes.len(),
                    boxes,
                },
            )
        }
        Command::Synth { render_dir } => {
            let images = generate_synthetic_dataset(&cfg.oracle)?;
            if let Some(dir) = render_dir {
                fs::create_dir_all(&dir)?;
                for img in &images {
                    let path = dir.join(format!("{}.pgm", img.id));
                    render_image(img)?.write_pgm(BufWriter::new(File::create(path)?))?;
                }
            }
            write_json(g, &DatasetFile::from_images(&images))
        }
        Command::PredictOracle {
            gt,
            sigma,
            crop_resize,
            sidecar,
        } => {
            let images = load_dataset(&gt)?.to_images()?;
            let mut oracle = cfg.oracle.clone();
            if let Some(s) = sigma {
                oracle.sigma_pred = s;
            }
            let codec = cfg.detector.codec;
            let mut file = if crop_resize {
                let (w, h) = images
                    .first()
                    .map(|i| (i.width, i.height))
                    .ok_or_else(|| data("Format", "annotation file has no images"))?;
                let spec = cfg.grid_spec.fitted_to(w / 2, h / 2);
                oracle_predict_crop_resize(&images, &spec, &codec, &oracle)?
            } else {
                oracle_predict(&images, &cfg.grid_spec, &codec, &oracle)?
            };
            if let Some(path) = sidecar {
                let mut out = BufWriter::new(File::create(&path)?);
                write_sidecar(&mut file, &mut out)?;
                out.flush()?;
                file.sidecar = Some(path.to_string_lossy().into_owned());
            }
            write_json(g, &file)
        }
        Command::Detect { pred, crop_resize } => {
            let mut file: PredictionFile = serde_json::from_str(&read_text(&pred)?)?;
            if let Some(side) = file.sidecar.clone() {
                let side_path = resolve_relative(&pred, Path::new(&side));
                read_sidecar(&mut file, BufReader::new(File::open(&side_path)?))?;
            }
            let has_full = file.images.iter().any(|i| i.view == View::Full);
            let has_branch = file.images.iter().any(|i| i.view != View::Full);
            if crop_resize && has_full {
                return Err(data("Format", "--crop-resize needs crop and half views; the file has full-frame entries"));
            }
            if !crop_resize && has_branch {
                return Err(data("Format", "the file holds crop/half views; pass --crop-resize"));
            }
            write_json(g, &detect_file(&file, &cfg.detector)?)
        }
        Command::Refine { dets, images } => {
            let file: DetectionFile = serde_json::from_str(&read_text(&dets)?)?;
            let mut report = RefineReport {
                images: Vec::new(),
                outcomes: Vec::new(),
            };
            for img in file.images {
                let path = images.join(format!("{}.pgm", img.id));
                let patch = GrayPatch::read_pgm(BufReader::new(
                    File::open(&path).map_err(|e| data("Io", format!("{}: {e}", path.display())))?,
                ))?;
                let mut refined = Vec::with_capacity(img.detections.len());
                let mut outcomes = Vec::with_capacity(img.detections.len());
                for d in img.detections {
                    let outcome = refine_in_image(&patch, &d.boundary, &cfg.refine)?;
                    let mut d2: Detection = d.clone();
                    if outcome.accepted {
                        d2.boundary = outcome.boundary.clone();
                    }
                    refined.push(d2);
                    outcomes.push(outcome);
                }
                report.images.push(signpose_core::harness::ImageDetections {
                    detections: refined,
                    ..img
                });
                report.outcomes.push(outcomes);
            }
            let all: Vec<&RefineOutcome> = report.outcomes.iter().flatten().collect();
            let accepted = all.iter().filter(|o| o.accepted).count();
            eprintln!("refined {accepted} of {} detections; {} discarded", all.len(), all.len() - accepted);
            write_json(g, &report)
        }
        Command::Eval { pred, gt, sweep } => {
            let dets: DetectionFile = serde_json::from_str(&read_text(&pred)?)?;
            let images = load_dataset(&gt)?.to_images()?;
            let eval_images = dets.pair_with(&images)?;
            if sweep {
                cfg.eval.validate()?;
                let rows = map_vs_iou_sweep(&eval_images, &cfg.eval);
                write_output(g, sweep_to_csv(&rows).as_bytes())
            } else {
                write_json(g, &evaluate(&eval_images, &cfg.eval)?)
            }
        }
        Command::Augment { gt, prune } => {
            let mut images = load_dataset(&gt)?.to_images()?;
            let mut skipped = Vec::new();
            if prune {
                images.retain(|img| {
                    let verdict = prune_unusable(img, cfg.augment.border_margin);
                    if !verdict.usable {
                        skipped.push(Skipped {
                            id: img.id.clone(),
                            reason: format!("{:?}", verdict.reason.expect("unusable has a reason")).to_lowercase(),
                        });
                    }
                    verdict.usable
                });
            }
            let result = augment_dataset(&images, &cfg.augment)?;
            let mut out_images = Vec::new();
            let mut trace = Vec::new();
            for (src, samples) in &result.samples {
                for (k, s) in samples.iter().enumerate() {
                    let AugmentSample {
                        homography,
                        sampled_corners,
                        image,
                        rejected_draws,
                    } = s;
                    let id = format!("{}-aug{k:02}", images[*src].id);
                    let mut renamed = image.clone();
                    renamed.id = id.clone();
                    out_images.extend(DatasetFile::from_images(&[renamed]).images);
                    trace.push(AugmentTrace {
                        id,
                        source: images[*src].id.clone(),
                        homography: *homography,
                        sampled_corners: *sampled_corners,
                        rejected_draws: *rejected_draws,
                    });
                }
            }
            skipped.extend(result.skipped.iter().map(|(i, reason)| Skipped {
                id: images[*i].id.clone(),
                reason: reason.clone(),
            }));
            write_json(
                g,
                &AugmentOutput {
                    images: out_images,
                    trace,
                    skipped,
                },
            )
        }
        Command::Mapsim { trials } => {
            let mut scene = cfg.mapsim.clone();
            if let Some(t) = trials {
                scene.trials = t;
            }
            write_output(g, rows_to_csv(&run_experiment(&scene)?).as_bytes())
        }
    }
}

/// A sidecar path in a prediction file is relative to that file.
fn resolve_relative(base_file: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() || p.exists() {
        return p.to_path_buf();
    }
    base_file.parent().map(|d| d.join(p)).unwrap_or_else(|| p.to_path_buf())
}

/// Refine one boundary given in full-image coordinates by cutting out a
/// patch large enough for the search range.
fn refine_in_image(
    image: &GrayPatch,
    boundary: &[Point2],
    cfg: &signpose_core::refine::RefineConfig,
) -> Result<RefineOutcome, Failure> {
    let reach = cfg.discard_threshold * cfg.search_range_factor + 4.0;
    let b = AABox::enclosing(boundary).ok_or_else(|| data("Format", "empty boundary"))?;
    let x0 = (b.left - reach).floor().max(0.0) as usize;
    let y0 = (b.top - reach).floor().max(0.0) as usize;
    let x1 = ((b.right + reach).ceil() as usize).min(image.width());
    let y1 = ((b.bottom + reach).ceil() as usize).min(image.height());
    if x1 <= x0 + 8 || y1 <= y0 + 8 {
        return Err(data("OutOfPatch", "detection lies outside the image"));
    }
    let patch = GrayPatch::from_fn(x1 - x0, y1 - y0, |x, y| image.get(x + x0, y + y0))?;
    let local: Vec<Point2> = boundary.iter().map(|p| p.translate(-(x0 as f64), -(y0 as f64))).collect();
    let mut out = refine_boundary(&patch, &local, cfg)?;
    for p in out.boundary.iter_mut() {
        *p = p.translate(x0 as f64, y0 as f64);
    }
    Ok(out)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            return report(Failure::Usage(e.to_string()));
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => report(f),
    }
}

fn report(f: Failure) -> ExitCode {
    let (code, kind, message) = match f {
        Failure::Usage(m) => (1, "Usage".to_string(), m),
        Failure::Data { kind, message } => (2, kind, message),
    };
    let body = serde_json::json!({ "error": kind, "message": message.trim_end() });
    eprintln!("{body}");
    ExitCode::from(code)
}
