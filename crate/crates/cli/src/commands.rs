use std::path::{Path, PathBuf};

use dvg_core::analysis::{
    self, correspondences, descriptor, format_correspondence_csv, format_descriptor_db, knn_search,
    parse_descriptor_db, DescriptorRecord, DvgDescriptor, PcaModel,
};
use dvg_core::grid::{ControlGrid, Vec3};
use dvg_core::optimizer::{fit_hierarchical, level_params, DvgModel, TraceEntry};
use dvg_core::registration::{cubify as cubify_shape, project};
use dvg_core::shape_io::{format_obj, format_xyz, load_shape, SampledShape};
use dvg_core::synthetic::{box_mesh, sphere_mesh};
use serde::Serialize;
use serde_json::{json, Value};

use crate::{
    CliError, CubifyArgs, DescribeArgs, FitArgs, MatchArgs, PcaDeformArgs, PcaFitArgs, SearchArgs, ShapeOpts,
    SynthArgs, SynthKind, TransferArgs,
};

type Result<T> = std::result::Result<T, CliError>;

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn parse_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?)
        .map_err(|e| CliError::Input(format!("cannot parse {}: {e}", path.display())))
}

fn to_json_line<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string(value).expect("value serializes");
    s.push('\n');
    s
}

fn load_sampled(path: &Path, opts: &ShapeOpts) -> Result<SampledShape> {
    let raw = load_shape(path, opts.format).map_err(CliError::input)?;
    SampledShape::from_mesh(&raw, opts.margin, opts.samples, opts.seed).map_err(CliError::input)
}

fn load_model(path: &Path) -> Result<DvgModel> {
    parse_json(path)
}

/// Final grid of a model file, the grid of one of its levels, or a bare grid.
fn load_grid(path: &Path, level: Option<usize>) -> Result<ControlGrid> {
    let text = read_text(path)?;
    if let Ok(model) = serde_json::from_str::<DvgModel>(&text) {
        return match level {
            None => Ok(model.final_grid().clone()),
            Some(k) => model.levels.get(k).cloned().ok_or_else(|| {
                CliError::Input(format!("level {k} out of range (model has 0..={})", model.max_level()))
            }),
        };
    }
    match serde_json::from_str::<ControlGrid>(&text) {
        Ok(grid) if level.is_none() => Ok(grid),
        Ok(_) => Err(CliError::Input(format!("{} is a single grid; --level needs a model", path.display()))),
        Err(e) => Err(CliError::Input(format!(
            "{} is neither a model nor a grid: {e}",
            path.display()
        ))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum OutKind {
    Obj,
    Xyz,
}

fn out_kind(path: &Path) -> Result<OutKind> {
    let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
    match ext.as_deref() {
        Some("obj") => Ok(OutKind::Obj),
        Some("xyz") => Ok(OutKind::Xyz),
        _ => Err(CliError::Input(format!(
            "output {} must end in .obj or .xyz",
            path.display()
        ))),
    }
}

/// Checks up front that the requested output can be produced from `shape`.
fn check_output(path: &Path, shape: &SampledShape) -> Result<OutKind> {
    let kind = out_kind(path)?;
    if kind == OutKind::Obj && shape.source_mesh.is_none() {
        return Err(CliError::Input(format!(
            "input has no faces; write {} as .xyz instead",
            path.display()
        )));
    }
    Ok(kind)
}

fn write_shape(path: &Path, kind: OutKind, shape: &SampledShape) -> Result<()> {
    let text = match (kind, &shape.source_mesh) {
        (OutKind::Obj, Some(mesh)) => format_obj(mesh),
        _ => format_xyz(&shape.points),
    };
    write_text(path, &text)
}

/// Sidecar path `<out>.config.json`.
fn config_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".config.json");
    out.with_file_name(name)
}

fn echo_config(path: &Path, config: Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(&config).expect("config serializes");
    text.push('\n');
    write_text(path, &text)
}

pub fn format_trace_csv(trace: &[TraceEntry]) -> String {
    let mut out = String::from("step,level,elastic,bending,inclusion,total\n");
    for t in trace {
        let e = &t.energy;
        out.push_str(&format!(
            "{},{},{:.16e},{:.16e},{:.16e},{:.16e}\n",
            t.step, t.level, e.elastic, e.bending, e.inclusion, e.total
        ));
    }
    out
}

pub fn fit(args: &FitArgs) -> Result<()> {
    let energy = args.energy.params();
    energy.validate().map_err(CliError::input)?;
    let schedule = args.schedule.params(args.shape_opts.seed);
    schedule.validate().map_err(CliError::input)?;
    let shape = load_sampled(&args.shape, &args.shape_opts)?;

    std::fs::create_dir_all(&args.out)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", args.out.display())))?;
    let per_level: Vec<Value> = (0..=schedule.max_level)
        .map(|k| {
            let r = 1usize << k;
            let level = level_params(&energy, k, schedule.max_level);
            json!({
                "level": k,
                "resolution": r,
                "covering_s": level.covering_s,
                "ball_radius": level.radius_for(r),
                "stiffness": level.stiffness_for(r),
            })
        })
        .collect();
    echo_config(
        &args.out.join("config.json"),
        json!({
            "command": "fit",
            "shape": args.shape,
            "out": args.out,
            "shape_options": args.shape_opts,
            "energy": energy,
            "schedule": schedule,
            "levels": per_level,
        }),
    )?;

    let shape_ref = args.shape.to_string_lossy();
    let fit = fit_hierarchical(&shape.points, &schedule, &energy, &shape_ref).map_err(CliError::runtime)?;
    write_text(&args.out.join("model.json"), &to_json_line(&fit.model))?;
    write_text(&args.out.join("trace.csv"), &format_trace_csv(&fit.trace))?;
    if let Some(last) = fit.trace.last() {
        println!(
            "resolution {} total {:.6e} inclusion {:.6e}",
            fit.model.resolution(),
            last.energy.total,
            last.energy.inclusion
        );
    }
    Ok(())
}

pub fn cubify(args: &CubifyArgs) -> Result<()> {
    let grid = load_grid(&args.model, args.level)?;
    let shape = load_sampled(&args.shape, &args.shape_opts)?;
    let kind = check_output(&args.out, &shape)?;
    echo_config(
        &config_path(&args.out),
        json!({
            "command": "cubify",
            "model": args.model,
            "shape": args.shape,
            "out": args.out,
            "level": args.level,
            "warp": args.warp,
            "shape_options": args.shape_opts,
        }),
    )?;
    let out = cubify_shape(&grid, &shape, args.warp.method, args.warp.tps_lambda).map_err(CliError::runtime)?;
    write_shape(&args.out, kind, &out)
}

/// The shape of `shape_path` moved from the source model's grid into the
/// target's.
pub fn transfer_shape(
    source: &ControlGrid,
    target: &ControlGrid,
    shape: &SampledShape,
    args: &TransferArgs,
) -> Result<SampledShape> {
    if source.resolution() != target.resolution() {
        return Err(CliError::Input(format!(
            "source resolution {} differs from target resolution {}",
            source.resolution(),
            target.resolution()
        )));
    }
    project(shape, source, target, args.warp.method, args.warp.tps_lambda).map_err(CliError::runtime)
}

pub fn transfer(args: &TransferArgs) -> Result<()> {
    let source = load_grid(&args.source, None)?;
    let target = load_grid(&args.target, None)?;
    let shape = load_sampled(&args.shape, &args.shape_opts)?;
    let kind = check_output(&args.out, &shape)?;
    echo_config(
        &config_path(&args.out),
        json!({
            "command": "transfer",
            "source": args.source,
            "target": args.target,
            "shape": args.shape,
            "out": args.out,
            "warp": args.warp,
            "shape_options": args.shape_opts,
        }),
    )?;
    let moved = transfer_shape(&source, &target, &shape, args)?;
    write_shape(&args.out, kind, &moved)
}

fn load_points(path: &Path) -> Result<Vec<Vec3>> {
    Ok(load_shape(path, None).map_err(CliError::input)?.vertices)
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => write_text(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn match_points(args: &MatchArgs) -> Result<()> {
    let source = load_points(&args.source)?;
    let target = load_points(&args.target)?;
    let c = correspondences(&source, &target).map_err(CliError::input)?;
    if let Some(out) = &args.out {
        echo_config(
            &config_path(out),
            json!({"command": "match", "source": args.source, "target": args.target, "out": out}),
        )?;
    }
    emit(args.out.as_deref(), &format_correspondence_csv(&c))
}

fn file_id(path: &Path) -> String {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("shape");
    stem.strip_suffix(".model").unwrap_or(stem).to_string()
}

pub fn describe(args: &DescribeArgs) -> Result<()> {
    let ids: Vec<String> = match &args.ids {
        Some(ids) if ids.len() != args.models.len() => {
            return Err(CliError::Input(format!(
                "{} ids given for {} models",
                ids.len(),
                args.models.len()
            )))
        }
        Some(ids) => ids.clone(),
        None => args.models.iter().map(|p| file_id(p)).collect(),
    };
    let records = args
        .models
        .iter()
        .zip(ids)
        .map(|(path, id)| {
            Ok(DescriptorRecord {
                id,
                descriptor: descriptor(&load_grid(path, None)?),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if let Some(out) = &args.out {
        echo_config(
            &config_path(out),
            json!({"command": "describe", "models": args.models, "ids": args.ids, "out": out}),
        )?;
    }
    emit(args.out.as_deref(), &format_descriptor_db(&records))
}

/// A query given as a descriptor record, a bare descriptor, a model or a grid.
fn load_query(path: &Path) -> Result<DvgDescriptor> {
    let text = read_text(path)?;
    if let Ok(rec) = serde_json::from_str::<DescriptorRecord>(&text) {
        return Ok(rec.descriptor);
    }
    if let Ok(d) = serde_json::from_str::<DvgDescriptor>(&text) {
        return Ok(d);
    }
    Ok(descriptor(&load_grid(path, None)?))
}

pub fn search(args: &SearchArgs) -> Result<()> {
    let query = load_query(&args.query)?;
    let db = parse_descriptor_db(&read_text(&args.db)?)
        .map_err(|e| CliError::Input(format!("{}: {e}", args.db.display())))?;
    let descriptors: Vec<DvgDescriptor> = db.iter().map(|r| r.descriptor.clone()).collect();
    let hits = knn_search(&query, &descriptors, args.k).map_err(CliError::input)?;
    let mut text = String::new();
    for h in hits {
        text.push_str(&format!("{}\t{:.16e}\n", db[h.index].id, h.distance));
    }
    if let Some(out) = &args.out {
        echo_config(
            &config_path(out),
            json!({"command": "search", "query": args.query, "db": args.db, "k": args.k, "out": out}),
        )?;
    }
    emit(args.out.as_deref(), &text)
}

pub fn pca_fit(args: &PcaFitArgs) -> Result<()> {
    let grids = args
        .models
        .iter()
        .map(|p| load_grid(p, None))
        .collect::<Result<Vec<_>>>()?;
    let model = analysis::pca_fit(&grids).map_err(CliError::input)?;
    echo_config(
        &config_path(&args.out),
        json!({"command": "pca-fit", "models": args.models, "out": args.out}),
    )?;
    write_text(&args.out, &to_json_line(&model))?;
    let ratios = model.explained_variance_ratio();
    println!(
        "{} components; explained variance {}",
        model.component_count(),
        ratios.iter().map(|r| format!("{r:.4}")).collect::<Vec<_>>().join(" ")
    );
    Ok(())
}

pub fn pca_deform(args: &PcaDeformArgs) -> Result<()> {
    let pca: PcaModel = parse_json(&args.pca)?;
    pca.check().map_err(CliError::input)?;
    let grid = load_model(&args.model)
        .map(|m| m.final_grid().clone())
        .or_else(|_| load_grid(&args.model, None))?;
    let shape = load_sampled(&args.shape, &args.shape_opts)?;
    let kind = check_output(&args.out, &shape)?;
    if args.coeffs.iter().any(|c| !c.is_finite()) {
        return Err(CliError::Input("coefficients must be finite".into()));
    }
    echo_config(
        &config_path(&args.out),
        json!({
            "command": "pca-deform",
            "pca": args.pca,
            "model": args.model,
            "shape": args.shape,
            "coeffs": args.coeffs,
            "out": args.out,
            "grid_out": args.grid_out,
            "shape_options": args.shape_opts,
        }),
    )?;
    let (moved, deformed) = analysis::pca_deform(&shape, &grid, &pca, &args.coeffs).map_err(|e| match e {
        analysis::AnalysisError::Registration(_) => CliError::runtime(e),
        _ => CliError::input(e),
    })?;
    write_shape(&args.out, kind, &moved)?;
    if let Some(g) = &args.grid_out {
        write_text(g, &to_json_line(&deformed))?;
    }
    Ok(())
}

pub fn synth(args: &SynthArgs) -> Result<()> {
    let (mesh, out) = match &args.kind {
        SynthKind::Sphere {
            radius,
            rings,
            segments,
            out,
        } => {
            if !(*radius > 0.0 && *radius <= 0.5) || *rings < 2 || *segments < 3 {
                return Err(CliError::Input(
                    "sphere needs 0 < radius <= 0.5, rings >= 2, segments >= 3".into(),
                ));
            }
            (sphere_mesh(*radius, *rings, *segments), out)
        }
        SynthKind::Box { size, divisions, out } => {
            if size.len() != 3 || size.iter().any(|s| !(*s > 0.0 && *s <= 1.0)) || *divisions == 0 {
                return Err(CliError::Input("box needs three sides in (0, 1] and divisions >= 1".into()));
            }
            (box_mesh(Vec3::new(size[0], size[1], size[2]), *divisions), out)
        }
    };
    write_text(out, &format_obj(&mesh))
}
