//! Command-line front end for the sparsecap pipeline.
//!
//! Subcommands:
//! - `synth`   generate a synthetic scene with ground truth
//! - `run`     run the capture pipeline on a detection directory
//! - `eval`    compare results against ground truth (MPJPE / PCP)
//! - `overlay` render per-view SVG overlays of results

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use sparsecap::association::{Skeleton3D, SkeletonTopology};
use sparsecap::body_model::{default_topology, forward_kinematics, BodyParams};
use sparsecap::config::PipelineConfig;
use sparsecap::geometry::{load_calibration, project, Camera, CameraRecord, Point3D};
use sparsecap::metrics::{self, PcpTally, PersonLandmarks};
use sparsecap::pipeline::{skeleton_landmarks, FaceGroup, Pipeline};
use sparsecap::synth::{self, FrameHandDetector, FrameTruth, SceneSpec};

#[derive(Parser)]
#[command(name = "sparsecap", about = "Sparse multi-view total motion capture")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene: cameras, detections, and ground truth.
    Synth {
        /// Scene spec JSON; `{}` selects the default two-person scene.
        #[arg(long)]
        spec: PathBuf,
        /// Output directory (created if missing).
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the pipeline over a directory of per-frame detections.
    Run {
        /// Camera calibration JSON (array of camera records).
        #[arg(long)]
        calib: PathBuf,
        /// Directory produced by `synth` (frames/frame_NNNN.json).
        #[arg(long)]
        detections: PathBuf,
        /// Pipeline config JSON; omit for defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory (created if missing).
        #[arg(long)]
        out: PathBuf,
        /// Disable the feedback loop (mask-based tracking reweighting).
        #[arg(long)]
        no_feedback: bool,
        /// Write per-frame soft masks as PGM images under out/masks/.
        #[arg(long)]
        dump_masks: bool,
    },
    /// Evaluate results against ground truth.
    Eval {
        /// Results directory produced by `run`.
        #[arg(long)]
        results: PathBuf,
        /// Truth directory produced by `synth`.
        #[arg(long)]
        truth: PathBuf,
        /// Comma-separated metrics: any of `mpjpe`, `pcp`.
        #[arg(long, default_value = "mpjpe,pcp")]
        metrics: String,
    },
    /// Render static SVG overlays of the results.
    Overlay {
        /// Results directory produced by `run`.
        #[arg(long)]
        results: PathBuf,
        /// Output directory for SVG files (created if missing).
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Synth { spec, out } => synth_cmd(&spec, &out),
        Command::Run {
            calib,
            detections,
            config,
            out,
            no_feedback,
            dump_masks,
        } => run_cmd(&calib, &detections, config.as_deref(), &out, no_feedback, dump_masks),
        Command::Eval {
            results,
            truth,
            metrics,
        } => eval_cmd(&results, &truth, &metrics),
        Command::Overlay { results, out } => overlay_cmd(&results, &out),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn frame_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|e| e == "json")
                && p.file_stem()
                    .and_then(|s| s.to_str())
                    .is_some_and(|s| s.starts_with("frame_"))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        bail!("no frame_*.json files in {}", dir.display());
    }
    Ok(files)
}

fn synth_cmd(spec_path: &Path, out: &Path) -> Result<()> {
    let spec: SceneSpec = read_json(spec_path)?;
    let scene = synth::generate(&spec).map_err(anyhow::Error::msg)?;
    let frames_dir = out.join("frames");
    fs::create_dir_all(&frames_dir)?;

    let records: Vec<CameraRecord> =
        scene.cameras.iter().map(CameraRecord::from_camera).collect();
    fs::write(out.join("cameras.json"), serde_json::to_string_pretty(&records)?)?;
    fs::write(out.join("scene.json"), serde_json::to_string_pretty(&scene.spec)?)?;
    for (i, frame) in scene.frames.iter().enumerate() {
        fs::write(
            frames_dir.join(format!("frame_{i:04}.json")),
            serde_json::to_string(frame)?,
        )?;
    }
    println!(
        "wrote {} frames, {} cameras to {}",
        scene.frames.len(),
        scene.cameras.len(),
        out.display()
    );
    Ok(())
}

fn face_groups(frame: &FrameTruth) -> Vec<FaceGroup> {
    frame
        .faces
        .iter()
        .flat_map(|per_view| {
            per_view.iter().enumerate().filter_map(|(v, f)| {
                f.as_ref().map(|landmarks| FaceGroup {
                    view_id: v,
                    landmarks: landmarks.clone(),
                })
            })
        })
        .collect()
}

/// Write one soft mask as a binary (P5) PGM image.
fn write_pgm(path: &Path, width: usize, height: usize, data: &[f64]) -> Result<()> {
    let mut bytes = format!("P5\n{width} {height}\n255\n").into_bytes();
    bytes.extend(data.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    fs::write(path, bytes)?;
    Ok(())
}

fn run_cmd(
    calib: &Path,
    detections: &Path,
    config: Option<&Path>,
    out: &Path,
    no_feedback: bool,
    dump_masks: bool,
) -> Result<()> {
    let calib_text = fs::read_to_string(calib)
        .with_context(|| format!("reading {}", calib.display()))?;
    let cameras: Vec<Camera> = load_calibration(&calib_text).map_err(anyhow::Error::msg)?;
    let mut cfg: PipelineConfig = match config {
        Some(path) => read_json(path)?,
        None => PipelineConfig::default(),
    };
    if no_feedback {
        cfg.feedback.enabled = false;
    }
    fs::create_dir_all(out)?;
    let masks_dir = out.join("masks");
    if dump_masks {
        fs::create_dir_all(&masks_dir)?;
    }

    let records: Vec<CameraRecord> = cameras.iter().map(CameraRecord::from_camera).collect();
    fs::write(out.join("cameras.json"), serde_json::to_string_pretty(&records)?)?;

    let mut pipeline = Pipeline::new(&cameras, cfg);
    let files = frame_files(&detections.join("frames"))?;
    for (fi, file) in files.iter().enumerate() {
        let frame: FrameTruth = read_json(file)?;
        let detector = FrameHandDetector { hands: &frame.hands };
        let faces = face_groups(&frame);
        let result = pipeline
            .step(&frame.detections, &detector, &faces)
            .with_context(|| format!("frame {fi}"))?;
        fs::write(
            out.join(format!("frame_{fi:04}.json")),
            serde_json::to_string(&result.to_json())?,
        )?;
        if dump_masks {
            for (&(person, view), mask) in pipeline.masks() {
                write_pgm(
                    &masks_dir.join(format!("frame_{fi:04}_p{person}_v{view}.pgm")),
                    mask.width,
                    mask.height,
                    &mask.data,
                )?;
            }
        }
    }
    println!("processed {} frames into {}", files.len(), out.display());
    Ok(())
}

/// Triangulated body joints of each person in one results frame.
fn result_skeletons(value: &serde_json::Value) -> Result<Vec<PersonLandmarks>> {
    let persons = value["persons"]
        .as_array()
        .context("results frame missing `persons`")?;
    persons
        .iter()
        .map(|p| {
            let joints: Vec<Option<Point3D>> =
                serde_json::from_value(p["joints"].clone())?;
            let skel = Skeleton3D {
                person_id: p["person_id"].as_u64().unwrap_or(0) as usize,
                per_joint_confidence: vec![1.0; joints.len()],
                joints,
            };
            Ok(skeleton_landmarks(&skel))
        })
        .collect()
}

/// Fitted body joints (forward kinematics of the fitted params), falling back
/// to the triangulated skeleton when a person's fit failed.
fn result_fitted(value: &serde_json::Value) -> Result<Vec<PersonLandmarks>> {
    let model = default_topology();
    let persons = value["persons"]
        .as_array()
        .context("results frame missing `persons`")?;
    persons
        .iter()
        .map(|p| {
            if p["fit"].is_null() {
                let joints: Vec<Option<Point3D>> =
                    serde_json::from_value(p["joints"].clone())?;
                let skel = Skeleton3D {
                    person_id: 0,
                    per_joint_confidence: vec![1.0; joints.len()],
                    joints,
                };
                return Ok(skeleton_landmarks(&skel));
            }
            let params: BodyParams = serde_json::from_value(p["fit"]["params"].clone())?;
            let landmarks = forward_kinematics(&model, &params);
            let points: Vec<Option<Point3D>> = model
                .body_landmarks
                .iter()
                .map(|&lm| Some(landmarks[lm]))
                .collect();
            Ok(PersonLandmarks {
                root: points[0].unwrap(),
                points,
            })
        })
        .collect()
}

fn truth_landmarks(frame: &FrameTruth) -> Vec<PersonLandmarks> {
    frame
        .body_joints
        .iter()
        .map(|joints| PersonLandmarks {
            root: joints[0],
            points: joints.iter().map(|&p| Some(p)).collect(),
        })
        .collect()
}

fn eval_cmd(results: &Path, truth: &Path, which: &str) -> Result<()> {
    let requested: Vec<&str> = which.split(',').map(str::trim).collect();
    for m in &requested {
        if !matches!(*m, "mpjpe" | "pcp") {
            bail!("unknown metric `{m}` (expected mpjpe, pcp)");
        }
    }
    let result_files = frame_files(results)?;
    let truth_files = frame_files(&truth.join("frames"))?;
    if result_files.len() != truth_files.len() {
        bail!(
            "{} result frames vs {} truth frames",
            result_files.len(),
            truth_files.len()
        );
    }

    let topology = SkeletonTopology::body_default();
    let subset: Vec<usize> = (0..topology.joint_count).collect();
    let mut mpjpe_sum = 0.0;
    let mut mpjpe_frames = 0usize;
    let mut tally = PcpTally::default();
    for (rf, tf) in result_files.iter().zip(&truth_files) {
        let value: serde_json::Value = read_json(rf)?;
        let frame: FrameTruth = read_json(tf)?;
        let est = result_fitted(&value)?;
        let gt = truth_landmarks(&frame);
        if requested.contains(&"mpjpe") {
            if let Ok(err) = metrics::mpjpe(&est, &gt, &subset) {
                mpjpe_sum += err;
                mpjpe_frames += 1;
            }
        }
        if requested.contains(&"pcp") {
            tally.add_frame(&est, &gt, &topology.bones);
        }
    }
    if requested.contains(&"mpjpe") {
        if mpjpe_frames == 0 {
            bail!("mpjpe: no person correspondences found");
        }
        println!("mpjpe_mm: {:.4}", mpjpe_sum / mpjpe_frames as f64);
    }
    if requested.contains(&"pcp") {
        println!("pcp_percent: {:.2}", tally.percent().map_err(anyhow::Error::msg)?);
    }
    Ok(())
}

const OVERLAY_COLORS: &[&str] = &["#e41a1c", "#377eb8", "#4daf4a", "#984ea3", "#ff7f00"];

fn overlay_cmd(results: &Path, out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    let calib = results.parent().unwrap_or(Path::new(".")).join("cameras.json");
    // Prefer calibration next to the results; fall back to a top-down sketch.
    let cameras: Option<Vec<Camera>> = fs::read_to_string(results.join("cameras.json"))
        .or_else(|_| fs::read_to_string(&calib))
        .ok()
        .and_then(|text| load_calibration(&text).ok());

    let files = frame_files(results)?;
    let mut written = 0usize;
    for (fi, file) in files.iter().enumerate() {
        let value: serde_json::Value = read_json(file)?;
        let est = result_skeletons(&value)?;
        match &cameras {
            Some(cams) => {
                for cam in cams {
                    let svg = render_view_svg(cam, &est);
                    fs::write(out.join(format!("frame_{fi:04}_v{}.svg", cam.id)), svg)?;
                    written += 1;
                }
            }
            None => {
                let svg = render_topdown_svg(&est);
                fs::write(out.join(format!("frame_{fi:04}_top.svg")), svg)?;
                written += 1;
            }
        }
    }
    println!("wrote {written} SVG files to {}", out.display());
    Ok(())
}

fn svg_bones(
    points: &[Option<[f64; 2]>],
    topology: &SkeletonTopology,
    color: &str,
    body: &mut String,
) {
    for &(a, b) in &topology.bones {
        if let (Some(Some(pa)), Some(Some(pb))) = (points.get(a), points.get(b)) {
            body.push_str(&format!(
                "<line x1=\"{:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" \
                 stroke=\"{color}\" stroke-width=\"2\"/>\n",
                pa[0], pa[1], pb[0], pb[1]
            ));
        }
    }
    for p in points.iter().flatten() {
        body.push_str(&format!(
            "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"3\" fill=\"{color}\"/>\n",
            p[0], p[1]
        ));
    }
}

fn render_view_svg(cam: &Camera, persons: &[PersonLandmarks]) -> String {
    let topology = SkeletonTopology::body_default();
    let mut body = String::new();
    for (pi, person) in persons.iter().enumerate() {
        let color = OVERLAY_COLORS[pi % OVERLAY_COLORS.len()];
        let points: Vec<Option<[f64; 2]>> = person
            .points
            .iter()
            .map(|p| {
                p.as_ref()
                    .and_then(|p| project(cam, p).ok())
                    .map(|px| [px.x, px.y])
            })
            .collect();
        svg_bones(&points, &topology, color, &mut body);
    }
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w:.0}\" height=\"{h:.0}\" \
         viewBox=\"0 0 {w:.0} {h:.0}\">\n<rect width=\"100%\" height=\"100%\" \
         fill=\"#111\"/>\n{body}</svg>\n",
        w = cam.width,
        h = cam.height
    )
}

/// Orthographic top-down (x/z) sketch used when no calibration is available.
fn render_topdown_svg(persons: &[PersonLandmarks]) -> String {
    let topology = SkeletonTopology::body_default();
    let (w, h, scale) = (800.0, 800.0, 100.0);
    let mut body = String::new();
    for (pi, person) in persons.iter().enumerate() {
        let color = OVERLAY_COLORS[pi % OVERLAY_COLORS.len()];
        let points: Vec<Option<[f64; 2]>> = person
            .points
            .iter()
            .map(|p| p.as_ref().map(|p| [w / 2.0 + p.x * scale, h / 2.0 + p.z * scale]))
            .collect();
        svg_bones(&points, &topology, color, &mut body);
    }
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w:.0}\" height=\"{h:.0}\" \
         viewBox=\"0 0 {w:.0} {h:.0}\">\n<rect width=\"100%\" height=\"100%\" \
         fill=\"#111\"/>\n{body}</svg>\n"
    )
}
