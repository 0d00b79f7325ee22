use std::fs;
use std::path::{Path, PathBuf};

use metriscale::bundle::{read_bundle, write_bundle};
use metriscale::dimensions::estimate_up_vector;
use metriscale::geometry::{FrameObservation, OutlierParams, PointCloud};
use metriscale::json::{fmt_f64, read_json, write_json};
use metriscale::merging::threshold_from_fraction;
use metriscale::metric_tree::{
    load_repository, load_repository_with, repository_to_json, CategoryNode, CategoryPath, Dim, FitOptions,
};
use metriscale::pipeline::{
    dimensions_stage, merge_stage, run_estimate, DimsEntry, DimsFile, EstimateReport, ObjectsFile, PipelineConfig,
    Stage, WindowSpec, REPORT_VERSION,
};
use metriscale::simgen::{
    ablation_bbox_vs_extraction, derive_seed, generate_scene, run_trials, AblationOptions, DimsMode, SceneOptions,
    Summary, TrialOptions,
};
use metriscale::Error;

use crate::args::{
    AblationArgs, Command, CurveArgs, DimFlags, DimsArgs, EstimateArgs, FileConfig, FitArgs, GenSceneArgs,
    MergeArgs, MergeFlags, SimulateArgs,
};
use crate::exit::{AppError, Staged, USAGE};

pub struct Context {
    pub seed: Option<u64>,
    pub quiet: bool,
    pub file: FileConfig,
}

impl Context {
    fn say(&self, line: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", line.as_ref());
        }
    }
}

pub fn dispatch(cmd: Command, ctx: &Context) -> Result<(), AppError> {
    match cmd {
        Command::Estimate(a) => estimate(a, ctx),
        Command::Merge(a) => merge(a, ctx),
        Command::Dims(a) => dims(a, ctx),
        Command::FitPriors(a) => fit_priors(a, ctx),
        Command::Simulate(a) => simulate(a, ctx),
        Command::SimulateAblation(a) => ablation(a, ctx),
        Command::GenScene(a) => gen_scene(a, ctx),
        Command::Curve(a) => curve(a, ctx),
    }
}

fn required<T>(cli: Option<T>, file: &Option<T>, flag: &str) -> Result<T, AppError>
where
    T: Clone,
{
    cli.or_else(|| file.clone()).ok_or_else(|| AppError {
        stage: "load".into(),
        message: format!("missing required option --{flag}"),
        code: USAGE,
    })
}

fn out_path(cli: Option<PathBuf>, file: &FileConfig, default: &str) -> PathBuf {
    cli.or_else(|| file.out.clone()).unwrap_or_else(|| PathBuf::from(default))
}

fn parse_dims_mode(s: &str) -> Result<DimsMode, AppError> {
    serde_json::from_value(serde_json::Value::String(s.into()))
        .map_err(|_| AppError::usage("load", format!("unknown dims mode {s:?} (expected sampled or component-mean)")))
}

fn parse_dim(s: &str) -> Result<Dim, AppError> {
    match s {
        "w" => Ok(Dim::W),
        "l" => Ok(Dim::L),
        "h" => Ok(Dim::H),
        _ => Err(AppError::usage("load", format!("unknown dimension {s:?} (expected w, l or h)"))),
    }
}

fn load_priors(cli: Option<PathBuf>, f: &FileConfig) -> Result<CategoryNode, AppError> {
    let path = required(cli, &f.priors, "priors")?;
    load_repository(&path).stage(Stage::Load)
}

fn load_scene(cli: Option<PathBuf>, f: &FileConfig) -> Result<Vec<FrameObservation>, AppError> {
    let path = required(cli, &f.scene, "scene")?;
    read_bundle(&path).stage(Stage::Load)
}

fn pipeline_config(m: MergeFlags, d: DimFlags, ctx: &Context) -> PipelineConfig {
    let f = &ctx.file;
    let def = PipelineConfig::default();
    let odef = OutlierParams::default();
    PipelineConfig {
        merge_threshold_frac: m.threshold_frac.or(f.threshold_frac).unwrap_or(def.merge_threshold_frac),
        min_points: m.min_points.or(f.min_points).unwrap_or(def.min_points),
        outlier_method: m.outlier.or_else(|| f.outlier.clone()).unwrap_or(def.outlier_method),
        outlier: OutlierParams {
            k: m.outlier_k.or(f.outlier_k).unwrap_or(odef.k),
            stddev_mult: m.outlier_std.or(f.outlier_std).unwrap_or(odef.stddev_mult),
            n_trees: m.iforest_trees.or(f.iforest_trees).unwrap_or(odef.n_trees),
            subsample: m.iforest_subsample.or(f.iforest_subsample).unwrap_or(odef.subsample),
            contamination: m.contamination.or(f.contamination).unwrap_or(odef.contamination),
        },
        dimension_policy: d.policy.or_else(|| f.policy.clone()).unwrap_or(def.dimension_policy),
        conf_threshold: d.conf_threshold.or(f.conf_threshold).unwrap_or(def.conf_threshold),
        window: def.window,
        seed: ctx.seed.unwrap_or(def.seed),
        timings: false,
    }
}

fn write_csv<I, R>(path: &Path, header: &[&str], rows: I) -> Result<(), AppError>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let io = |e: std::io::Error| AppError::new(Stage::Write, Error::Io { path: path.into(), source: e });
    let csv_err = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(e) => io(e),
        other => AppError::usage(Stage::Write, format!("{other:?}")),
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(row).map_err(csv_err)?;
    }
    w.flush().map_err(io)
}

fn estimate(a: EstimateArgs, ctx: &Context) -> Result<(), AppError> {
    let f = &ctx.file;
    let explicit = (a.smin.or(f.smin), a.smax.or(f.smax), a.ds.or(f.ds));
    let auto = a.auto_window || (f.auto_window.unwrap_or(false) && a.smin.is_none() && a.smax.is_none() && a.ds.is_none());
    let window = match explicit {
        _ if auto => WindowSpec::Auto,
        (None, None, None) => WindowSpec::Auto,
        (Some(s_min), Some(s_max), Some(ds)) => WindowSpec::Explicit { s_min, s_max, ds },
        _ => return Err(AppError::usage(Stage::Load, "--smin, --smax and --ds must be given together")),
    };
    let timings = a.timings || f.timings.unwrap_or(false);
    let out = out_path(a.out, f, "report.json");
    let repo = load_priors(a.priors, f)?;
    let frames = load_scene(a.scene, f)?;
    let cfg = PipelineConfig {
        window,
        timings,
        ..pipeline_config(a.merge, a.dims, ctx)
    };
    let report = run_estimate(&frames, &repo, &cfg)?;
    write_json(&out, &report).stage(Stage::Write)?;

    match report.s_refined {
        Some(r) => ctx.say(format!("scale: {:.4} mm/unit (refined {:.4})", report.s_hat, r)),
        None => ctx.say(format!("scale: {:.4} mm/unit", report.s_hat)),
    }
    ctx.say(format!(
        "window: [{}, {}] step {} ({} grid points)",
        report.window.s_min, report.window.s_max, report.window.ds, report.grid_points
    ));
    let used = report.objects.iter().filter(|o| o.log_likelihood.is_some()).count();
    ctx.say(format!("objects: {} used, {} dropped", used, report.dropped.len()));
    for o in &report.objects {
        let d = &o.dims;
        let used: Vec<&str> = o.used.iter().map(|d| d.as_str()).collect();
        ctx.say(format!(
            "  #{} {}: l={:.4}({:.2}) w={:.4}({:.2}) h={:.4}({:.2}) used [{}]",
            o.id,
            o.category,
            d.l.value,
            d.l.confidence,
            d.w.value,
            d.w.confidence,
            d.h.value,
            d.h.confidence,
            used.join(",")
        ));
    }
    for d in &report.dropped {
        let id = d.id.map_or_else(|| "-".to_string(), |i| format!("#{i}"));
        ctx.say(format!("  dropped {} {} at {}: {}", id, d.category, d.stage, d.reason));
    }
    ctx.say(format!("wrote {}", out.display()));
    Ok(())
}

fn merge(a: MergeArgs, ctx: &Context) -> Result<(), AppError> {
    let f = &ctx.file;
    let with_points = a.points || f.points.unwrap_or(false);
    let out = out_path(a.out, f, "objects.json");
    let frames = load_scene(a.scene, f)?;
    let cfg = pipeline_config(a.merge, DimFlags { conf_threshold: None, policy: None }, ctx);
    cfg.validate().stage(Stage::Load)?;
    let (objects, dropped) = merge_stage(&frames, &cfg)?;
    let threshold = threshold_from_fraction(&frames, cfg.merge_threshold_frac);
    let file = ObjectsFile::new(&objects, dropped, threshold, with_points);
    write_json(&out, &file).stage(Stage::Write)?;
    ctx.say(format!(
        "merged {} frames into {} objects ({} dropped), threshold {:.6}",
        frames.len(),
        file.objects.len(),
        file.dropped.len(),
        threshold
    ));
    for o in &file.objects {
        ctx.say(format!("  #{} {}: {} points from {} frames", o.id, o.category, o.point_count, o.source_frames.len()));
    }
    ctx.say(format!("wrote {}", out.display()));
    Ok(())
}

fn dims(a: DimsArgs, ctx: &Context) -> Result<(), AppError> {
    let f = &ctx.file;
    let out = out_path(a.out, f, "dims.json");
    let frames = load_scene(a.scene, f)?;
    let objects_path = required(a.objects, &f.objects, "objects")?;
    let objects: ObjectsFile = read_json(&objects_path).stage(Stage::Load)?;
    let clouds = objects.clouds().stage(Stage::Load)?;
    let cfg = pipeline_config(
        MergeFlags {
            threshold_frac: None,
            min_points: None,
            outlier: None,
            outlier_k: None,
            outlier_std: None,
            iforest_trees: None,
            iforest_subsample: None,
            contamination: None,
        },
        a.dims,
        ctx,
    );
    cfg.validate().stage(Stage::Load)?;
    let poses: Vec<_> = frames.iter().map(|fr| fr.pose.clone()).collect();
    let up = estimate_up_vector(&poses).stage(Stage::UpVector)?;
    let inputs: Vec<(usize, CategoryPath, &PointCloud)> = clouds.iter().map(|(i, c, p)| (*i, c.clone(), p)).collect();
    let (dims, dropped) = dimensions_stage(&inputs, &up, &cfg)?;
    let file = DimsFile {
        version: REPORT_VERSION,
        up: [up.x, up.y, up.z],
        conf_threshold: cfg.conf_threshold,
        objects: dims
            .iter()
            .map(|d| DimsEntry {
                id: d.id,
                category: d.category.clone(),
                dims: metriscale::pipeline::dims_report(d),
            })
            .collect(),
        dropped,
    };
    write_json(&out, &file).stage(Stage::Write)?;
    for o in &file.objects {
        let d = &o.dims;
        let mark = |r: bool| if r { "" } else { "*" };
        ctx.say(format!(
            "#{} {}: l {:.4}({:.2}){} w {:.4}({:.2}){} h {:.4}({:.2}){}",
            o.id,
            o.category,
            d.l.value,
            d.l.confidence,
            mark(d.l.reliable),
            d.w.value,
            d.w.confidence,
            mark(d.w.reliable),
            d.h.value,
            d.h.confidence,
            mark(d.h.reliable)
        ));
    }
    ctx.say(format!("wrote {} (* = below confidence threshold)", out.display()));
    Ok(())
}

fn fit_priors(a: FitArgs, ctx: &Context) -> Result<(), AppError> {
    let f = &ctx.file;
    let path = required(a.priors, &f.priors, "priors")?;
    let out = out_path(a.out, f, "priors_fitted.json");
    let def = FitOptions::default();
    let opts = FitOptions {
        max_components: a.max_components.or(f.max_components).unwrap_or(def.max_components),
        min_samples: a.min_samples.or(f.min_samples).unwrap_or(def.min_samples),
        seed: ctx.seed.unwrap_or(def.seed),
        ..def
    };
    let repo = load_repository_with(&path, &opts).stage(Stage::Load)?;
    let text = repository_to_json(&repo).step("fit")?;
    fs::write(&out, text)
        .map_err(|e| Error::Io { path: out.clone(), source: e })
        .stage(Stage::Write)?;
    for (path, node) in repo.walk() {
        if let Some(g) = node.prior() {
            let name = if path.is_empty() { "(root)".to_string() } else { path.join("/") };
            ctx.say(format!(
                "{}: {} samples, {} components over [{}]",
                name,
                node.sample_count(),
                g.n_components(),
                node.dim_mask()
            ));
        }
    }
    ctx.say(format!("wrote {}", out.display()));
    Ok(())
}

fn summary_line(s: &Summary) -> String {
    format!("median {:.4}  mean {:.4}  std {:.4}  failures {}", s.median, s.mean, s.std, s.failures)
}

fn opt_f64(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn simulate(a: SimulateArgs, ctx: &Context) -> Result<(), AppError> {
    let f = &ctx.file;
    let def = TrialOptions::default();
    let dims_mode = match a.dims_mode.or_else(|| f.dims_mode.clone()) {
        Some(s) => parse_dims_mode(&s)?,
        None => def.dims_mode,
    };
    let opts = TrialOptions {
        n_list: a.n_list.or_else(|| f.n_list.clone()).unwrap_or(def.n_list),
        r_list: a.r_list.or_else(|| f.r_list.clone()).unwrap_or(def.r_list),
        trials: a.trials.or(f.trials).unwrap_or(def.trials),
        seed: ctx.seed.unwrap_or(def.seed),
        dims_mode,
        conf_threshold: a.conf_threshold.or(f.conf_threshold).unwrap_or(def.conf_threshold),
        points_per_object: a.points_per_object.or(f.points_per_object).unwrap_or(def.points_per_object),
    };
    let out = out_path(a.out, f, "trials.csv");
    let repo = load_priors(a.priors, f)?;
    let reports = run_trials(&repo, &opts).step("simulate")?;
    let rows = reports.iter().flat_map(|r| {
        r.errors
            .iter()
            .enumerate()
            .map(move |(t, e)| vec![r.n.to_string(), fmt_f64(r.r), t.to_string(), opt_f64(*e)])
    });
    write_csv(&out, &["N", "R", "trial", "rel_error"], rows)?;
    for r in &reports {
        ctx.say(format!("N={:<3} R={:<5} {}", r.n, r.r, summary_line(&r.summary)));
    }
    ctx.say(format!("wrote {}", out.display()));
    Ok(())
}

fn ablation(a: AblationArgs, ctx: &Context) -> Result<(), AppError> {
    let f = &ctx.file;
    let def = AblationOptions::default();
    let opts = AblationOptions {
        trials: a.trials.or(f.trials).unwrap_or(def.trials),
        truncation: a.truncation.or(f.truncation).unwrap_or(def.truncation),
        n_objects: a.n_objects.or(f.n_objects).unwrap_or(def.n_objects),
        seed: ctx.seed.unwrap_or(def.seed),
        conf_threshold: a.conf_threshold.or(f.conf_threshold).unwrap_or(def.conf_threshold),
        points_per_object: a.points_per_object.or(f.points_per_object).unwrap_or(def.points_per_object),
    };
    let out = out_path(a.out, f, "ablation.csv");
    let repo = load_priors(a.priors, f)?;
    let rep = ablation_bbox_vs_extraction(&repo, &opts).step("simulate")?;
    let rows = rep
        .full_bbox
        .iter()
        .zip(&rep.confidence_filtered)
        .enumerate()
        .map(|(t, (b, c))| vec![t.to_string(), opt_f64(*b), opt_f64(*c)]);
    write_csv(&out, &["trial", "full_bbox", "confidence_filtered"], rows)?;
    ctx.say(format!("truncation {}", rep.truncation));
    ctx.say(format!("  full bbox:           {}", summary_line(&rep.full_bbox_summary)));
    ctx.say(format!("  confidence filtered: {}", summary_line(&rep.confidence_filtered_summary)));
    ctx.say(format!(
        "  median ratio: {:.3}",
        rep.full_bbox_summary.median / rep.confidence_filtered_summary.median
    ));
    ctx.say(format!("wrote {}", out.display()));
    Ok(())
}

fn gen_scene(a: GenSceneArgs, ctx: &Context) -> Result<(), AppError> {
    let f = &ctx.file;
    let def = SceneOptions::default();
    let dims_mode = match a.dims_mode.or_else(|| f.dims_mode.clone()) {
        Some(s) => parse_dims_mode(&s)?,
        None => def.dims_mode,
    };
    let truncation_axis = match a.truncation_axis.or_else(|| f.truncation_axis.clone()) {
        Some(s) => Some(parse_dim(&s)?),
        None => None,
    };
    let opts = SceneOptions {
        n_objects: a.n_objects.or(f.n_objects).unwrap_or(def.n_objects),
        true_scale: a.true_scale.or(f.true_scale).unwrap_or(def.true_scale),
        truncation: a.truncation.or(f.truncation),
        truncation_axis,
        dims_mode,
        points_per_object: a.points_per_object.or(f.points_per_object).unwrap_or(def.points_per_object),
        n_cameras: a.cameras.or(f.cameras).unwrap_or(def.n_cameras),
        ..def
    };
    let out = required(a.out, &f.out, "out")?;
    let repo = load_priors(a.priors, f)?;
    let seed = ctx.seed.unwrap_or(0);
    let scene = generate_scene(&repo, &opts, seed).step("generate")?;
    let frames = scene.frames(derive_seed(seed, &[3]));
    fs::create_dir_all(&out)
        .map_err(|e| Error::Io { path: out.clone(), source: e })
        .stage(Stage::Write)?;
    write_bundle(&out, &frames).stage(Stage::Write)?;
    write_json(&out.join("truth.json"), &scene.truth()).stage(Stage::Write)?;
    ctx.say(format!(
        "{} objects, {} frames, true scale {} mm/unit",
        scene.objects.len(),
        frames.len(),
        scene.true_scale
    ));
    for o in &scene.objects {
        ctx.say(format!(
            "  {} ({:?}): w={:.1} l={:.1} h={:.1} mm, {} points",
            o.category,
            o.shape,
            o.dims_mm[0],
            o.dims_mm[1],
            o.dims_mm[2],
            o.cloud.len()
        ));
    }
    ctx.say(format!("wrote {}", out.display()));
    Ok(())
}

fn curve(a: CurveArgs, ctx: &Context) -> Result<(), AppError> {
    let f = &ctx.file;
    let path = required(a.report, &f.report, "report")?;
    let out = out_path(a.out, f, "curve.csv");
    let report: EstimateReport = read_json(&path).stage(Stage::Load)?;
    let rows = report.curve.iter().map(|&(s, ll)| vec![fmt_f64(s), fmt_f64(ll)]);
    write_csv(&out, &["s", "log_likelihood"], rows)?;
    ctx.say(format!("{} curve points, peak at s = {}", report.curve.len(), report.s_hat));
    ctx.say(format!("wrote {}", out.display()));
    Ok(())
}
