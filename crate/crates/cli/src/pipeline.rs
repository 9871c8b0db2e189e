//! Batch run of the whole chain: load, trail, ROI, detect, plan, apply,
//! crop, reconstruct. Each stage can be skipped or fed from a file, and every
//! failure carries the name of the stage that raised it.

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nanoct::aligner::{apply_plan, build_plan, crop_stack, AlignMode, AlignmentPlan, ShiftFill};
use nanoct::fbp_recon::{ortho_slices, reconstruct_rows, Filter, Interpolation, ReconParams};
use nanoct::ref_locator::{track_reference, LocatorOptions, Method, RefTrack};
use nanoct::stack_io::{load_stack, read_manifest, save_volume};
use nanoct::trail_roi::{suggest_roi, trail_product, TrailMap};
use nanoct::{Error, ProjectionStack, Roi, Volume};
use serde::{Deserialize, Serialize};

use crate::render::{write_png, Normalize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Stage {
    Load,
    Trail,
    Roi,
    Detect,
    Plan,
    Apply,
    Crop,
    Reconstruct,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Load,
        Stage::Trail,
        Stage::Roi,
        Stage::Detect,
        Stage::Plan,
        Stage::Apply,
        Stage::Crop,
        Stage::Reconstruct,
    ];
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Load => "LOAD",
            Stage::Trail => "TRAIL",
            Stage::Roi => "ROI",
            Stage::Detect => "DETECT",
            Stage::Plan => "PLAN",
            Stage::Apply => "APPLY",
            Stage::Crop => "CROP",
            Stage::Reconstruct => "RECONSTRUCT",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Stage::ALL
            .into_iter()
            .find(|st| st.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown stage {s:?}"))
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{stage} stage failed: {source}")]
pub struct StageError {
    pub stage: Stage,
    #[source]
    pub source: Error,
}

impl StageError {
    fn new(stage: Stage, source: Error) -> Self {
        StageError { stage, source }
    }

    fn io(stage: Stage, path: &Path, source: std::io::Error) -> Self {
        StageError::new(
            stage,
            Error::Io {
                path: path.to_path_buf(),
                source,
            },
        )
    }
}

/// Everything a batch run needs; every field has a default so a JSON config
/// only lists what it changes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub manifest: PathBuf,
    pub out: PathBuf,
    /// Gray levels above each frame's minimum still counted as trail.
    pub trail_delta: f32,
    /// Pixels added around the trail's bounding box.
    pub roi_margin: usize,
    /// Replaces the trail-derived ROI.
    pub roi: Option<Roi>,
    pub method: Method,
    pub locator: LocatorOptions,
    /// CSV track loaded instead of running detection.
    pub track_file: Option<PathBuf>,
    pub mode: AlignMode,
    /// JSON plan loaded instead of building one.
    pub plan_file: Option<PathBuf>,
    pub fill: ShiftFill,
    pub filter: Filter,
    pub interpolation: Interpolation,
    pub output_size: Option<usize>,
    /// Inclusive rows of the cropped stack.
    pub rows: Option<(usize, usize)>,
    pub attenuation: bool,
    pub skip: Vec<Stage>,
    pub previews: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            manifest: PathBuf::new(),
            out: PathBuf::from("out"),
            trail_delta: 40.0,
            roi_margin: 4,
            roi: None,
            method: Method::Gvb,
            locator: LocatorOptions::default(),
            track_file: None,
            mode: AlignMode::Cosine,
            plan_file: None,
            fill: ShiftFill::BorderMode,
            filter: Filter::RamLak,
            interpolation: Interpolation::Linear,
            output_size: None,
            rows: None,
            attenuation: true,
            skip: Vec::new(),
            previews: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Run,
    Skip,
    /// Result taken from the config instead of computed.
    Override,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StagePlan {
    pub stage: Stage,
    pub action: Action,
    pub note: String,
}

impl PipelineConfig {
    fn skipped(&self, s: Stage) -> bool {
        self.skip.contains(&s)
    }

    /// Decides what each stage will do, checking that every stage that runs
    /// has its inputs.
    pub fn resolve(&self) -> Result<Vec<StagePlan>, StageError> {
        if self.skipped(Stage::Load) {
            return Err(StageError::new(
                Stage::Load,
                Error::InvalidArgument("the stack cannot be skipped".into()),
            ));
        }
        let missing = |stage: Stage, what: &str| {
            StageError::new(
                stage,
                Error::InvalidArgument(format!("{what} is skipped and no override is given")),
            )
        };
        let mut out = vec![StagePlan {
            stage: Stage::Load,
            action: Action::Run,
            note: self.manifest.display().to_string(),
        }];

        let recon = !self.skipped(Stage::Reconstruct);
        let crop = !self.skipped(Stage::Crop);
        let apply = !self.skipped(Stage::Apply);
        let plan_needed = crop || apply;
        let plan = if self.plan_file.is_some() {
            Action::Override
        } else if self.skipped(Stage::Plan) {
            if plan_needed {
                return Err(missing(if apply { Stage::Apply } else { Stage::Crop }, "PLAN"));
            }
            Action::Skip
        } else {
            Action::Run
        };
        let detect = if plan != Action::Run {
            Action::Skip
        } else if self.track_file.is_some() {
            Action::Override
        } else if self.skipped(Stage::Detect) {
            return Err(missing(Stage::Plan, "DETECT"));
        } else {
            Action::Run
        };
        let roi = if detect != Action::Run {
            Action::Skip
        } else if self.roi.is_some() {
            Action::Override
        } else if self.skipped(Stage::Roi) {
            return Err(missing(Stage::Detect, "ROI"));
        } else {
            Action::Run
        };
        let trail = if roi != Action::Run {
            Action::Skip
        } else if self.skipped(Stage::Trail) {
            return Err(missing(Stage::Roi, "TRAIL"));
        } else {
            Action::Run
        };

        let path_note = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        out.push(StagePlan {
            stage: Stage::Trail,
            action: trail,
            note: format!("delta {}", self.trail_delta),
        });
        out.push(StagePlan {
            stage: Stage::Roi,
            action: roi,
            note: match self.roi {
                Some(r) => format!("{},{},{},{}", r.x0, r.y0, r.width, r.height),
                None => format!("trail bounds + {} px", self.roi_margin),
            },
        });
        out.push(StagePlan {
            stage: Stage::Detect,
            action: detect,
            note: path_note(&self.track_file).unwrap_or_else(|| format!("{}", self.method)),
        });
        out.push(StagePlan {
            stage: Stage::Plan,
            action: plan,
            note: path_note(&self.plan_file).unwrap_or_else(|| format!("{:?}", self.mode).to_uppercase()),
        });
        out.push(StagePlan {
            stage: Stage::Apply,
            action: if apply { Action::Run } else { Action::Skip },
            note: format!("fill {:?}", self.fill),
        });
        out.push(StagePlan {
            stage: Stage::Crop,
            action: if crop { Action::Run } else { Action::Skip },
            note: String::new(),
        });
        out.push(StagePlan {
            stage: Stage::Reconstruct,
            action: if recon { Action::Run } else { Action::Skip },
            note: format!(
                "{:?} {:?} size {} rows {} attenuation {}",
                self.filter,
                self.interpolation,
                self.output_size.map_or("default".into(), |s| s.to_string()),
                self.rows.map_or("all".into(), |(a, b)| format!("{a}:{b}")),
                self.attenuation
            ),
        });
        Ok(out)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: Stage,
    pub action: Action,
    pub seconds: f64,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PipelineReport {
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    pub roi: Option<Roi>,
    pub hits: Option<usize>,
    pub crop: Option<Roi>,
    pub volume_dims: Option<(usize, usize, usize)>,
    pub stages: Vec<StageTiming>,
    pub outputs: Vec<PathBuf>,
    pub total_seconds: f64,
}

impl PipelineReport {
    /// One line per stage with its wall time.
    pub fn summary(&self) -> String {
        let mut s = format!(
            "{} frames of {}x{}\n",
            self.frames, self.width, self.height
        );
        for t in &self.stages {
            let secs = match t.action {
                Action::Skip => "       -".to_string(),
                _ => format!("{:>7.2}s", t.seconds),
            };
            s.push_str(&format!(
                "{:<12} {:<8} {secs}  {}\n",
                t.stage.to_string(),
                format!("{:?}", t.action).to_lowercase(),
                t.detail
            ));
        }
        s.push_str(&format!("{:<12} {:<8} {:>7.2}s\n", "TOTAL", "", self.total_seconds));
        s
    }

    pub fn seconds(&self, stage: Stage) -> Option<f64> {
        self.stages.iter().find(|t| t.stage == stage).map(|t| t.seconds)
    }
}

/// Results held in memory after a run, for callers that want more than the
/// files on disk.
pub struct PipelineOutput {
    pub report: PipelineReport,
    pub track: Option<RefTrack>,
    pub plan: Option<AlignmentPlan>,
    pub volume: Option<Volume>,
}

/// What [`run_pipeline`] would do, without reading frames or writing files.
pub fn dry_run(config: &PipelineConfig) -> Result<String, StageError> {
    let stages = config.resolve()?;
    let manifest = read_manifest(&config.manifest).map_err(|e| StageError::new(Stage::Load, e))?;
    let mut s = format!(
        "stack: {} frames {}x{} {}-bit, {}..{} deg\noutput: {}\n",
        manifest.frame_paths.len(),
        manifest.width,
        manifest.height,
        manifest.bit_depth,
        manifest.angle_start,
        manifest.angle_stop,
        config.out.display()
    );
    for p in stages {
        s.push_str(&format!(
            "{:<12} {:<8} {}\n",
            p.stage.to_string(),
            format!("{:?}", p.action).to_lowercase(),
            p.note
        ));
    }
    Ok(s)
}

struct Timer<'a> {
    stages: Vec<StageTiming>,
    log: &'a dyn Fn(&str),
}

impl Timer<'_> {
    fn record(&mut self, stage: Stage, action: Action, start: Instant, detail: String) {
        let t = StageTiming {
            stage,
            action,
            seconds: start.elapsed().as_secs_f64(),
            detail,
        };
        (self.log)(&format!("{:<12} {:>7.2}s  {}", stage.to_string(), t.seconds, t.detail));
        self.stages.push(t);
    }
}

/// Runs every stage in order and writes the artifacts under `config.out`:
/// `trail.png`, `roi.json`, `track.csv`, `plan.json`, `volume.f32` with its
/// sidecar, `axial.png`/`coronal.png`/`sagittal.png`, and `summary.json`.
pub fn run_pipeline(config: &PipelineConfig, log: &dyn Fn(&str)) -> Result<PipelineOutput, StageError> {
    let total = Instant::now();
    let stages = config.resolve()?;
    let action = |s: Stage| stages.iter().find(|p| p.stage == s).map(|p| p.action).unwrap();
    let out = &config.out;
    std::fs::create_dir_all(out).map_err(|e| StageError::io(Stage::Load, out, e))?;
    let mut outputs = Vec::new();
    let mut timer = Timer {
        stages: Vec::new(),
        log,
    };

    let t = Instant::now();
    let stack = load_stack(&config.manifest).map_err(|e| StageError::new(Stage::Load, e))?;
    timer.record(
        Stage::Load,
        Action::Run,
        t,
        format!("{} frames {}x{}", stack.len(), stack.width(), stack.height()),
    );

    let t = Instant::now();
    let trail: Option<TrailMap> = match action(Stage::Trail) {
        Action::Run => {
            let trail = trail_product(&stack, config.trail_delta);
            if config.previews {
                let p = out.join("trail.png");
                write_png(&trail.mask.to_image(), Normalize::MinMax, &p)
                    .map_err(|e| StageError::io(Stage::Trail, &p, e))?;
                outputs.push(p);
            }
            timer.record(Stage::Trail, Action::Run, t, format!("{} trail pixels", trail.zero_count));
            Some(trail)
        }
        a => {
            timer.record(Stage::Trail, a, t, String::new());
            None
        }
    };

    let t = Instant::now();
    let roi = match action(Stage::Roi) {
        Action::Run => {
            let trail = trail.as_ref().expect("trail resolved to run");
            Some(suggest_roi(trail, config.roi_margin).map_err(|e| StageError::new(Stage::Roi, e))?)
        }
        Action::Override => {
            let r = config.roi.expect("roi resolved to override");
            r.check_within(stack.width(), stack.height())
                .map_err(|e| StageError::new(Stage::Roi, e))?;
            Some(r)
        }
        Action::Skip => None,
    };
    if let Some(r) = roi {
        let p = out.join("roi.json");
        write_json(&p, &r).map_err(|e| StageError::new(Stage::Roi, e))?;
        outputs.push(p);
    }
    timer.record(
        Stage::Roi,
        action(Stage::Roi),
        t,
        roi.map_or(String::new(), |r| format!("{},{},{},{}", r.x0, r.y0, r.width, r.height)),
    );

    let t = Instant::now();
    let track = match action(Stage::Detect) {
        Action::Run => Some(
            track_reference(&stack, &roi.expect("roi resolved"), config.method, &config.locator)
                .map_err(|e| StageError::new(Stage::Detect, e))?,
        ),
        Action::Override => {
            let p = config.track_file.as_ref().expect("track file");
            let text = std::fs::read_to_string(p).map_err(|e| StageError::io(Stage::Detect, p, e))?;
            Some(RefTrack::from_csv(&text).map_err(|e| StageError::new(Stage::Detect, e))?)
        }
        Action::Skip => None,
    };
    if let Some(track) = &track {
        check_track(track, stack.len()).map_err(|e| StageError::new(Stage::Detect, e))?;
        let p = out.join("track.csv");
        std::fs::write(&p, track.to_csv()).map_err(|e| StageError::io(Stage::Detect, &p, e))?;
        outputs.push(p);
    }
    timer.record(
        Stage::Detect,
        action(Stage::Detect),
        t,
        track
            .as_ref()
            .map_or(String::new(), |tr| format!("{}/{} frames located", tr.hits(), tr.len())),
    );

    let t = Instant::now();
    let plan = match action(Stage::Plan) {
        Action::Run => Some(
            build_plan(track.as_ref().expect("track resolved"), stack.width(), stack.height(), config.mode)
                .map_err(|e| StageError::new(Stage::Plan, e))?,
        ),
        Action::Override => {
            let p = config.plan_file.as_ref().expect("plan file");
            let text = std::fs::read_to_string(p).map_err(|e| StageError::io(Stage::Plan, p, e))?;
            let plan = AlignmentPlan::from_json(&text).map_err(|e| StageError::new(Stage::Plan, e))?;
            if plan.len() != stack.len() || plan.width != stack.width() || plan.height != stack.height() {
                return Err(StageError::new(
                    Stage::Plan,
                    Error::ShapeMismatch(format!(
                        "plan covers {} frames of {}x{}, stack has {} of {}x{}",
                        plan.len(),
                        plan.width,
                        plan.height,
                        stack.len(),
                        stack.width(),
                        stack.height()
                    )),
                ));
            }
            Some(plan)
        }
        Action::Skip => None,
    };
    if let Some(plan) = &plan {
        let p = out.join("plan.json");
        std::fs::write(&p, plan.to_json()).map_err(|e| StageError::io(Stage::Plan, &p, e))?;
        outputs.push(p);
    }
    timer.record(
        Stage::Plan,
        action(Stage::Plan),
        t,
        plan.as_ref().map_or(String::new(), |p| {
            format!("R {:.2} px, {} flagged", p.r_signed, p.flagged().len())
        }),
    );

    let t = Instant::now();
    let mut working = stack;
    if action(Stage::Apply) == Action::Run {
        working = apply_plan(&working, plan.as_ref().expect("plan resolved"), config.fill)
            .map_err(|e| StageError::new(Stage::Apply, e))?;
    }
    timer.record(Stage::Apply, action(Stage::Apply), t, String::new());

    let t = Instant::now();
    let crop = if action(Stage::Crop) == Action::Run {
        let c = plan.as_ref().expect("plan resolved").crop;
        working = crop_stack(&working, &c).map_err(|e| StageError::new(Stage::Crop, e))?;
        Some(c)
    } else {
        None
    };
    timer.record(
        Stage::Crop,
        action(Stage::Crop),
        t,
        crop.map_or(String::new(), |c| format!("{}x{} at {},{}", c.width, c.height, c.x0, c.y0)),
    );

    let t = Instant::now();
    let volume = if action(Stage::Reconstruct) == Action::Run {
        let vol = reconstruct(&working, config).map_err(|e| StageError::new(Stage::Reconstruct, e))?;
        let p = out.join("volume.f32");
        save_volume(&vol, &p).map_err(|e| StageError::new(Stage::Reconstruct, e))?;
        outputs.push(p);
        outputs.push(out.join("volume.json"));
        if config.previews {
            let (nx, ny, nz) = vol.dims();
            let views = ortho_slices(&vol, nx / 2, ny / 2, nz / 2)
                .map_err(|e| StageError::new(Stage::Reconstruct, e))?;
            for (name, img) in [
                ("axial.png", &views.axial),
                ("coronal.png", &views.coronal),
                ("sagittal.png", &views.sagittal),
            ] {
                let p = out.join(name);
                write_png(img, Normalize::MinMax, &p).map_err(|e| StageError::io(Stage::Reconstruct, &p, e))?;
                outputs.push(p);
            }
        }
        Some(vol)
    } else {
        None
    };
    timer.record(
        Stage::Reconstruct,
        action(Stage::Reconstruct),
        t,
        volume.as_ref().map_or(String::new(), |v| {
            let (nx, ny, nz) = v.dims();
            format!("{nx}x{ny}x{nz} voxels")
        }),
    );

    let summary_path = out.join("summary.json");
    outputs.push(summary_path.clone());
    let report = PipelineReport {
        frames: working.len(),
        width: working.width(),
        height: working.height(),
        roi,
        hits: track.as_ref().map(|t| t.hits()),
        crop,
        volume_dims: volume.as_ref().map(|v| v.dims()),
        stages: timer.stages,
        outputs,
        total_seconds: total.elapsed().as_secs_f64(),
    };
    write_json(&summary_path, &report).map_err(|e| StageError::new(Stage::Reconstruct, e))?;
    Ok(PipelineOutput {
        report,
        track,
        plan,
        volume,
    })
}

fn reconstruct(stack: &ProjectionStack, config: &PipelineConfig) -> nanoct::Result<Volume> {
    let params = ReconParams {
        filter: config.filter,
        interpolation: config.interpolation,
        output_size: config.output_size,
        row_range: config.rows,
        attenuation: config.attenuation,
        ..ReconParams::for_stack(stack)
    };
    reconstruct_rows(stack, &params)
}

/// An automatic run cannot anchor the targets without the first frame.
fn check_track(track: &RefTrack, frames: usize) -> nanoct::Result<()> {
    if track.len() != frames {
        return Err(Error::ShapeMismatch(format!(
            "track has {} entries for {frames} frames",
            track.len()
        )));
    }
    match track.entries.first() {
        Some(e) if e.hit => Ok(()),
        _ => Err(Error::NoReference(format!(
            "reference point not found in frame 0 ({}/{} frames located)",
            track.hits(),
            track.len()
        ))),
    }
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> nanoct::Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}
