use std::path::{Path, PathBuf};

use clap::Args;
use log::info;
use serde::Serialize;
use trajfield::curve::CurveFamily;
use trajfield::derive::{self, CameraEstimate, CameraSearch, TrackPoint};
use trajfield::loss::{self, Init, LossBreakdown, OptimizeConfig};
use trajfield::metrics::{self, AlignMode, BenchConfig, MetricsReport, Protocol, Sequence};
use trajfield::{fit, synth, Camera, CurveSpec, GroundTruthBundle, TrajectoryField};

use crate::tfz::{self, Container, Provenance, Role, Tensor};
use crate::{output, CliError, Command, GlobalArgs};

pub(crate) fn dispatch(cmd: &Command, g: &GlobalArgs) -> Result<(), CliError> {
    match cmd {
        Command::Synth(a) => synth_cmd(a, g),
        Command::Fit(a) => fit_cmd(a),
        Command::Optimize(a) => optimize_cmd(a, g),
        Command::Eval(a) => eval_cmd(a),
        Command::Derive(a) => derive_cmd(a),
        Command::Gradcheck(a) => gradcheck_cmd(a, g),
        Command::Info(a) => info_cmd(a),
    }
}

/// `64` (square) or `WxH`.
fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let parse = |x: &str| x.trim().parse::<usize>().ok().filter(|v| *v > 0);
    let (w, h) = match s.split_once(['x', 'X']) {
        Some((w, h)) => (parse(w), parse(h)),
        None => (parse(s), parse(s)),
    };
    w.zip(h).ok_or_else(|| format!("expected a positive size like 64 or 64x48, got `{s}`"))
}

fn parse_csv(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|_| format!("bad number `{x}` in `{s}`")))
        .collect()
}

/// `i,u,v`.
fn parse_pixel(s: &str) -> Result<(usize, usize, usize), String> {
    let v: Vec<usize> = s
        .split(',')
        .map(|x| x.trim().parse::<usize>().map_err(|_| format!("bad pixel `{s}`; expected i,u,v")))
        .collect::<Result<_, _>>()?;
    match v[..] {
        [i, u, w] => Ok((i, u, w)),
        _ => Err(format!("bad pixel `{s}`; expected i,u,v")),
    }
}

fn read_bundle(path: &Path) -> Result<(GroundTruthBundle, Container), CliError> {
    let c = Container::read(path)?;
    Ok((tfz::bundle_from_container(&c)?, c))
}

fn read_field(path: &Path) -> Result<(TrajectoryField, Container), CliError> {
    let c = Container::read(path)?;
    Ok((tfz::field_from_container(&c)?, c))
}

fn write_json(path: Option<&Path>, value: &impl Serialize) -> Result<(), CliError> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    match path {
        Some(p) => output::write(p, s),
        None => {
            print!("{s}");
            Ok(())
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub preset: String,
    #[arg(long, default_value_t = 8)]
    pub frames: usize,
    /// Image size, `64` or `WxH`.
    #[arg(long, default_value = "64", value_parser = parse_size)]
    pub size: (usize, usize),
    /// Focal length as a multiple of the image width (preset default otherwise).
    #[arg(long)]
    pub focal_scale: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

fn synth_cmd(a: &SynthArgs, g: &GlobalArgs) -> Result<(), CliError> {
    let mut scene = synth::build_scene(&a.preset, g.seed)?;
    if let Some(f) = a.focal_scale {
        scene.camera_path.focal_scale = f;
    }
    let (w, h) = a.size;
    info!("synth {} seed {} N={} {}x{}", a.preset, g.seed, a.frames, w, h);
    let gt = synth::generate_bundle(&scene, a.frames, h, w)?;
    let prov = Provenance { tool_version: tfz::tool_version(), seed: Some(g.seed), preset: Some(a.preset.clone()) };
    let mut c = tfz::bundle_to_container(&gt, prov)?;
    c.set_attribute("scene", serde_json::to_value(&scene)?);
    c.write(&a.out)?;
    println!(
        "wrote {} ({} frames, {}x{}, scene_scale {:.6}, {} correspondences)",
        a.out.display(),
        a.frames,
        w,
        h,
        gt.scene_scale,
        gt.correspondences.len()
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct CurveArgs {
    #[arg(long, default_value_t = 10)]
    pub control_points: usize,
    #[arg(long, default_value = "bspline")]
    pub family: CurveFamily,
}

impl CurveArgs {
    fn spec(&self) -> Result<CurveSpec, CliError> {
        Ok(CurveSpec::new(self.family, self.control_points)?)
    }
}

fn derived_provenance(gt: &Container) -> Provenance {
    Provenance { tool_version: tfz::tool_version(), ..gt.manifest.provenance.clone() }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub gt: PathBuf,
    #[command(flatten)]
    pub curve: CurveArgs,
    #[arg(long, default_value_t = fit::DEFAULT_RIDGE)]
    pub ridge: f64,
    #[arg(long)]
    pub out: PathBuf,
}

fn fit_cmd(a: &FitArgs) -> Result<(), CliError> {
    let (gt, gc) = read_bundle(&a.gt)?;
    let spec = a.curve.spec()?;
    let ff = fit::fit_field(&gt, &spec, a.ridge)?;
    let mut c = tfz::field_to_container(&ff.field, derived_provenance(&gc))?;
    c.set_attribute("scene_scale", gt.scene_scale);
    c.set_attribute("fit_residual_rms", ff.residual_rms);
    c.set_attribute("ridge", a.ridge);
    c.write(&a.out)?;
    println!("wrote {} (D={}, residual rms {:.6e})", a.out.display(), spec.num_control_points, ff.residual_rms);
    Ok(())
}

#[derive(Debug, Args)]
pub struct OptimizeArgs {
    #[arg(long)]
    pub gt: PathBuf,
    #[command(flatten)]
    pub curve: CurveArgs,
    #[arg(long, default_value_t = 500)]
    pub iters: usize,
    #[arg(long, default_value_t = 0.5)]
    pub step: f64,
    /// centroid, gt_first_frame, random or random:SEED.
    #[arg(long, default_value = "centroid")]
    pub init: String,
    /// Loss weights (JSON).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Keep confidences fixed at their initial value.
    #[arg(long)]
    pub fixed_confidences: bool,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the loss history and final breakdown (JSON).
    #[arg(long)]
    pub history: Option<PathBuf>,
}

#[derive(Serialize)]
struct OptimizeLog<'a> {
    history: &'a [f64],
    accepted: usize,
    breakdown: &'a LossBreakdown,
}

fn optimize_cmd(a: &OptimizeArgs, g: &GlobalArgs) -> Result<(), CliError> {
    let (gt, gc) = read_bundle(&a.gt)?;
    let spec = a.curve.spec()?;
    let weights = crate::config::load_weights(a.config.as_deref(), g.seed)?;
    let init = if a.init == "random" { Init::Random(g.seed) } else { a.init.parse()? };
    let config = OptimizeConfig { iters: a.iters, step: a.step, init, optimize_confidences: !a.fixed_confidences };
    let res = loss::optimize_field(&gt, &spec, &weights, &config)?;
    let mut c = tfz::field_to_container(&res.field, derived_provenance(&gc))?;
    c.set_attribute("scene_scale", gt.scene_scale);
    c.set_attribute("final_loss", res.breakdown.total);
    c.set_attribute("loss_weights", serde_json::to_value(weights)?);
    c.write(&a.out)?;
    if let Some(h) = &a.history {
        write_json(Some(h), &OptimizeLog { history: &res.history, accepted: res.accepted, breakdown: &res.breakdown })?;
    }
    println!(
        "wrote {} (loss {:.6e} -> {:.6e}, {} accepted steps)",
        a.out.display(),
        res.history.first().copied().unwrap_or(f64::NAN),
        res.breakdown.total,
        res.accepted
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Predicted field container (repeat for several sequences).
    #[arg(long, required = true)]
    pub pred: Vec<PathBuf>,
    /// Ground-truth bundle matching each `--pred`, in order.
    #[arg(long, required = true)]
    pub gt: Vec<PathBuf>,
    #[arg(long, default_value = "none")]
    pub align: AlignMode,
    #[arg(long, default_value = "video")]
    pub protocol: Protocol,
    #[arg(long, default_value_t = metrics::DEFAULT_PAIR_GAP)]
    pub pair_gap: usize,
    /// APD thresholds as multiples of the scene scale.
    #[arg(long, value_parser = parse_csv)]
    pub thresholds: Option<Vec<f64>>,
    /// Record wall-clock seconds per stage (the report is then not reproducible).
    #[arg(long)]
    pub timings: bool,
    /// Report path; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Human-readable summary using the display scaling of published tables.
fn summary(r: &MetricsReport) -> String {
    let f = |v: Option<f64>, s: f64| v.map_or("n/a".to_string(), |v| format!("{:.4}", v * s));
    format!(
        "EPE mix {} sta {} dyn {} | CA(x1e2) {} | SDD(x1e3) {} | APD {} | AJ {}",
        f(r.epe_mix, 1.0),
        f(r.epe_sta, 1.0),
        f(r.epe_dyn, 1.0),
        f(r.ca, 1e2),
        f(r.sdd, 1e3),
        f(r.apd3d_mean, 1.0),
        f(r.aj, 1.0)
    )
}

fn eval_cmd(a: &EvalArgs) -> Result<(), CliError> {
    if a.pred.len() != a.gt.len() {
        return Err(CliError::Usage(format!("{} --pred but {} --gt paths", a.pred.len(), a.gt.len())));
    }
    let mut loaded = Vec::new();
    for (p, g) in a.pred.iter().zip(&a.gt) {
        loaded.push((p.display().to_string(), read_field(p)?.0, read_bundle(g)?.0));
    }
    let sequences: Vec<Sequence<'_>> =
        loaded.iter().map(|(name, f, g)| Sequence { name: name.clone(), field: f, gt: g }).collect();
    let config = BenchConfig {
        protocol: a.protocol,
        pair_gap: a.pair_gap,
        align: a.align,
        thresholds: a.thresholds.clone().unwrap_or_else(|| metrics::DEFAULT_THRESHOLDS.to_vec()),
        record_timings: a.timings,
    };
    let report = metrics::benchmark_run(&sequences, &config)?;
    write_json(a.out.as_deref(), &report)?;
    eprintln!("{}", summary(&report));
    Ok(())
}

#[derive(Debug, Args)]
pub struct DeriveArgs {
    #[arg(long)]
    pub field: PathBuf,
    /// Ground truth supplying cameras for `--project` and the scene scale.
    #[arg(long)]
    pub gt: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Dynamic mask (PGM per frame and a `dynamic_mask` tensor).
    #[arg(long)]
    pub mask: bool,
    /// Absolute variance threshold; default 1e-4 · scene_scale².
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Scene flow of `--frame`.
    #[arg(long)]
    pub flow: bool,
    #[arg(long, default_value_t = 0)]
    pub frame: usize,
    /// 2D track of `--pixel`.
    #[arg(long)]
    pub project: bool,
    #[arg(long, default_value_t = 16)]
    pub samples: usize,
    /// Pixel `i,u,v` for `--project` and `--forecast` (default: center of frame 0).
    #[arg(long, value_parser = parse_pixel)]
    pub pixel: Option<(usize, usize, usize)>,
    #[arg(long)]
    pub forecast: Option<f64>,
    /// Fuse every frame into this target frame (PLY).
    #[arg(long)]
    pub fuse: Option<usize>,
    /// Estimate per-frame cameras from the self point maps.
    #[arg(long)]
    pub cameras: bool,
}

#[derive(Debug, Default, Serialize)]
struct Products {
    scene_scale: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    mask_threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    dynamic_fraction: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    track: Option<TrackOut>,
    #[serde(skip_serializing_if = "Option::is_none")]
    forecast: Option<ForecastOut>,
    #[serde(skip_serializing_if = "Option::is_none")]
    fused: Option<FusedOut>,
    #[serde(skip_serializing_if = "Option::is_none")]
    cameras: Option<Vec<CameraOut>>,
}

#[derive(Debug, Serialize)]
struct TrackOut {
    pixel: [usize; 3],
    camera_source: &'static str,
    points: Vec<TrackPoint>,
}

#[derive(Debug, Serialize)]
struct ForecastOut {
    pixel: [usize; 3],
    dt: f64,
    position: [f64; 3],
}

#[derive(Debug, Serialize)]
struct FusedOut {
    target_frame: usize,
    points: usize,
    file: String,
}

#[derive(Debug, Serialize)]
struct CameraOut {
    frame: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    estimate: Option<CameraEstimate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

/// Bounding-box diagonal of all valid self points.
fn self_scale(field: &TrajectoryField) -> Result<f64, CliError> {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for i in 0..field.num_frames() {
        let map = field.self_point_map(i)?;
        for (x, ok) in map.points.iter().zip(&map.valid) {
            if *ok {
                for c in 0..3 {
                    lo[c] = lo[c].min(x[c]);
                    hi[c] = hi[c].max(x[c]);
                }
            }
        }
    }
    let d: f64 = (0..3).map(|c| (hi[c] - lo[c]).powi(2)).sum::<f64>().sqrt();
    Ok(if d.is_finite() { d } else { 0.0 })
}

fn derive_cmd(a: &DeriveArgs) -> Result<(), CliError> {
    let (field, fc) = read_field(&a.field)?;
    let gt = a.gt.as_deref().map(read_bundle).transpose()?.map(|(g, _)| g);
    let scene_scale = match (&gt, fc.attribute_f64("scene_scale")) {
        (Some(g), _) => g.scene_scale,
        (None, Some(s)) => s,
        (None, None) => self_scale(&field)?,
    };
    let (n, h, w) = (field.num_frames(), field.height(), field.width());
    let mut report = Container::new(Role::Report, fc.manifest.provenance.clone());
    report.manifest.timestamps = Some(field.timestamps().to_vec());
    report.manifest.curve_spec = Some(field.spec().clone());
    report.set_attribute("scene_scale", scene_scale);
    let mut products = Products { scene_scale, ..Default::default() };
    let (pi, pu, pv) = a.pixel.unwrap_or((0, w / 2, h / 2));

    if a.mask {
        let thr = a.threshold.unwrap_or(derive::DEFAULT_MASK_THRESHOLD * scene_scale * scene_scale);
        let mask = derive::dynamic_mask(&field, thr)?;
        for i in 0..n {
            let frame = &mask[i * h * w..(i + 1) * h * w];
            output::write(&a.out.join(format!("dynamic_mask_{i:04}.pgm")), output::pgm_bytes(frame, w, h))?;
        }
        products.dynamic_fraction = Some(mask.iter().filter(|m| **m).count() as f64 / mask.len() as f64);
        products.mask_threshold = Some(thr);
        report.insert("dynamic_mask", Tensor::new(vec![n, h, w], mask.iter().map(|m| *m as u8 as f32).collect())?);
    }
    if a.flow {
        let flow = derive::scene_flow(&field, a.frame)?;
        let data: Vec<f32> = flow.iter().flat_map(|v| v.map(|x| x as f32)).collect();
        report.insert("scene_flow", Tensor::new(vec![h, w, 3], data)?);
        report.set_attribute("scene_flow_frame", a.frame);
    }
    let estimates = a.cameras.then(|| derive::estimate_cameras(&field, &CameraSearch::default()));
    if let Some(est) = &estimates {
        products.cameras = Some(
            est.iter()
                .enumerate()
                .map(|(frame, r)| match r {
                    Ok(e) => CameraOut { frame, estimate: Some(*e), error: None },
                    Err(e) => CameraOut { frame, estimate: None, error: Some(e.to_string()) },
                })
                .collect(),
        );
    }
    if a.project {
        let (cams, source): (Vec<Camera>, &'static str) = match (&gt, &estimates) {
            (Some(g), _) if g.cameras.is_some() => (g.cameras.clone().unwrap_or_default(), "ground_truth"),
            (_, Some(est)) => (
                est.iter()
                    .map(|r| r.as_ref().map(|e| e.camera).map_err(|e| CliError::Numeric(e.to_string())))
                    .collect::<Result<_, _>>()?,
                "estimated",
            ),
            _ => return Err(CliError::Usage("--project needs --gt with cameras or --cameras".into())),
        };
        let points = derive::project_2d(&field, &cams, pi, pu, pv, a.samples)?;
        products.track = Some(TrackOut { pixel: [pi, pu, pv], camera_source: source, points });
    }
    if let Some(dt) = a.forecast {
        let position = derive::forecast(&field, pi, pu, pv, dt)?;
        products.forecast = Some(ForecastOut { pixel: [pi, pu, pv], dt, position });
    }
    if let Some(j) = a.fuse {
        let sources: Vec<usize> = (0..n).collect();
        let cloud = derive::fuse_canonical(&field, j, &sources)?;
        let file = format!("fused_{j:04}.ply");
        output::write(&a.out.join(&file), output::ply_string(&cloud, j))?;
        products.fused = Some(FusedOut { target_frame: j, points: cloud.points.len(), file });
    }
    report.write(&a.out)?;
    write_json(Some(&a.out.join("products.json")), &products)?;
    println!("wrote {}", a.out.display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Control-point counts to check (comma-separated).
    #[arg(long, default_value = "4,7,10", value_delimiter = ',')]
    pub control_points: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    pub frames: usize,
    #[arg(long, default_value = "8", value_parser = parse_size)]
    pub size: (usize, usize),
    #[arg(long, default_value_t = 1e-4)]
    pub eps: f64,
    #[arg(long, default_value_t = 40)]
    pub trials: usize,
    /// Failure threshold on the max relative error.
    #[arg(long, default_value_t = 1e-5)]
    pub tol: f64,
}

fn gradcheck_cmd(a: &GradcheckArgs, g: &GlobalArgs) -> Result<(), CliError> {
    let (w, h) = a.size;
    // Every loss component switched on.
    let weights = loss::LossWeights {
        lambda_time: 0.1,
        pair_seed: g.seed,
        rigid_pair_samples: 64,
        ..loss::LossWeights::default()
    };
    let mut worst: f64 = 0.0;
    for &d in &a.control_points {
        let spec = CurveSpec::bspline(d)?;
        let (field, gt) = loss::random_problem(&spec, a.frames, h, w, g.seed)?;
        let r = loss::grad_check(&field, &gt, &weights, a.eps, a.trials, g.seed)?;
        println!("D={d} trials={} max_rel_error={:.3e}", r.trials, r.max_rel_error);
        worst = worst.max(r.max_rel_error);
    }
    println!("max relative error: {worst:.3e}");
    if !(worst <= a.tol) {
        return Err(CliError::Numeric(format!("gradient check failed: {worst:.3e} > {:.1e}", a.tol)));
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct InfoArgs {
    pub path: PathBuf,
}

fn info_cmd(a: &InfoArgs) -> Result<(), CliError> {
    let c = Container::read(&a.path)?;
    let m = &c.manifest;
    println!("path: {}", a.path.display());
    println!("schema_version: {}", m.schema_version);
    println!("role: {}", serde_json::to_value(m.role)?.as_str().unwrap_or("?"));
    println!("tool: {}", m.provenance.tool_version);
    if let Some(p) = &m.provenance.preset {
        println!("preset: {p}");
    }
    if let Some(s) = m.provenance.seed {
        println!("seed: {s}");
    }
    if let Some(ts) = &m.timestamps {
        println!("frames: {}", ts.len());
    }
    if let Some(s) = &m.curve_spec {
        println!("curve: {} degree {} with {} control points", s.family, s.degree, s.num_control_points);
    }
    for t in &m.tensors {
        println!("tensor {}: {} {:?}", t.name, t.dtype, t.shape);
    }
    for (k, v) in &m.attributes {
        if !v.is_object() {
            println!("{k}: {v}");
        }
    }
    Ok(())
}
