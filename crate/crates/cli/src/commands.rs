use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use shapemorph::estimation::{
    characterize_batch, compare_batches, fit_params, sample_batch_params, AxisTest, BatchModel, FitConfig, FitResult,
};
use shapemorph::geometry::{
    deviation_from_cop, deviation_from_displacement, select_key_points, KeyPointSet, Mesh, MeshId, Vec3,
};
use shapemorph::io::{
    deviation_ply, deviation_vtk, load_deviation_ply, load_displacement, load_mesh_auto, load_point_cloud, write_file,
};
use shapemorph::kernels::{Family, KernelSpec, KernelTerm};
use shapemorph::simulation::{
    conditional_simulate, node_points, write_ensemble, Method, RandomSource, Scenario, SimulationOptions,
    ToleranceSpec, DENSE_LIMIT,
};
use shapemorph::Error;

use crate::session::SessionManifest;
use crate::{
    read_text, write_json, BatchArgs, CliResult, Context, DeviationArgs, ExportArgs, ExportFormat, Failure, FitArgs,
    KeypointArgs, MethodArg, SimulateArgs, SCHEMA,
};

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| "out".into(), |s| s.to_string_lossy().into_owned())
}

#[derive(Debug, Serialize)]
struct DeviationSummary {
    schema: u32,
    mesh_checksum: MeshId,
    n_nodes: usize,
    rms: f64,
    min: f64,
    max: f64,
    missing: usize,
}

pub(crate) fn deviation(ctx: &Context, a: &DeviationArgs) -> CliResult<()> {
    let mesh = load_mesh_auto(&a.mesh)?;
    let field = match (&a.cop, &a.displacement) {
        (Some(cop), _) => deviation_from_cop(&mesh, &load_point_cloud(cop)?, a.max_dist)?,
        (None, Some(disp)) => deviation_from_displacement(&mesh, &load_displacement(disp)?)?,
        (None, None) => return Err(Failure::validation("either --cop or --displacement is required")),
    };
    let name = a.name.clone().unwrap_or_else(|| format!("{}_dev", stem(&a.mesh)));
    let ply = ctx.out.join(format!("{name}.ply"));
    write_file(&ply, deviation_ply(&mesh, &field.values))?;
    println!("wrote {}", ply.display());
    let s = field.stats();
    let summary = DeviationSummary {
        schema: SCHEMA,
        mesh_checksum: mesh.id().clone(),
        n_nodes: mesh.n_nodes(),
        rms: s.rms,
        min: s.min,
        max: s.max,
        missing: field.missing_count(),
    };
    write_json(&ctx.out.join(format!("{name}.json")), &summary)
}

/// On-disk form of a key-point set.
#[derive(Debug, Serialize, Deserialize)]
pub struct KeypointsFile {
    pub schema: u32,
    #[serde(flatten)]
    pub keys: KeyPointSet,
    #[serde(default)]
    pub coordinates: Vec<Vec3>,
}

pub(crate) fn load_keypoints(path: &Path, mesh: &Mesh) -> CliResult<KeyPointSet> {
    let file: KeypointsFile = serde_json::from_str(&read_text(path)?).map_err(Error::from)?;
    file.keys.validate(mesh)?;
    Ok(file.keys)
}

pub(crate) fn keypoints(ctx: &Context, a: &KeypointArgs) -> CliResult<()> {
    let mesh = load_mesh_auto(&a.mesh)?;
    let keys = select_key_points(&mesh, a.voxel_size)?;
    println!("{} key points from {} nodes", keys.len(), mesh.n_nodes());
    let coordinates = keys.coordinates(&mesh);
    write_json(
        &ctx.out.join("keypoints.json"),
        &KeypointsFile {
            schema: SCHEMA,
            keys,
            coordinates,
        },
    )
}

fn template(families: &[Family], dim: usize) -> CliResult<KernelSpec> {
    let terms = families
        .iter()
        .map(|&f| match f {
            Family::Periodic => KernelTerm::periodic(1.0, vec![1.0; dim], vec![1.0; dim]),
            f => KernelTerm::new(f, 1.0, vec![1.0; dim]),
        })
        .collect();
    Ok(KernelSpec::new(dim, terms)?)
}

pub(crate) fn fit(ctx: &Context, a: &FitArgs) -> CliResult<()> {
    let mesh = load_mesh_auto(&a.mesh)?;
    let field = load_deviation_ply(&a.deviation, &mesh)?;
    let keys = match (&a.keypoints, a.voxel_size) {
        (Some(path), _) => load_keypoints(path, &mesh)?,
        (None, Some(v)) => select_key_points(&mesh, v)?,
        (None, None) => return Err(Failure::validation("either --keypoints or --voxel-size is required")),
    };
    let dim = a.dim as usize;
    let points = node_points(&mesh, dim)?.select(&keys.indices);
    let z: Vec<f64> = keys.indices.iter().map(|&i| field.values[i]).collect();
    let config = FitConfig {
        max_iters: a.max_iters,
        grad_tol: a.grad_tol,
        restarts: a.restarts,
        jitter: a.jitter,
        seed: ctx.seed,
    };
    let result = fit_params(&points, &z, &template(&a.family, dim)?, &config)?;
    println!(
        "fitted {} key points: nll {:.6}, lengths {:?}{}",
        keys.len(),
        result.nll,
        result.spec.lengths_flat(),
        if result.converged { "" } else { " (iteration limit reached)" }
    );
    let path = ctx.out.join("fit.json");
    write_file(&path, result.to_json() + "\n")?;
    println!("wrote {}", path.display());
    Ok(())
}

fn method_for(arg: MethodArg, mesh: &Mesh) -> Method {
    match arg {
        MethodArg::Auto if mesh.n_nodes() <= DENSE_LIMIT => Method::Cholesky,
        MethodArg::Auto | MethodArg::Reduced => Method::Reduced,
        MethodArg::Cholesky => Method::Cholesky,
        MethodArg::Eigen => Method::Eigen,
    }
}

pub(crate) fn simulate(ctx: &Context, a: &SimulateArgs) -> CliResult<()> {
    let (session, write_session) = match &a.session {
        Some(path) => (SessionManifest::load(path)?, false),
        None => {
            let mesh_path = a.mesh.as_ref().expect("clap enforces --mesh");
            let mesh = load_mesh_auto(mesh_path)?;
            let s = SessionManifest::new(
                mesh_path,
                &mesh,
                a.keypoints.as_ref().expect("clap enforces --keypoints"),
                a.spec.as_ref().expect("clap enforces --spec"),
                a.scenario.as_ref().expect("clap enforces --scenario"),
            )?;
            (s, true)
        }
    };
    let mesh = load_mesh_auto(&session.mesh)?;
    session.check_mesh(&mesh)?;
    let keys = load_keypoints(&session.keypoints, &mesh)?;
    let spec = KernelSpec::from_json(&read_text(&session.spec)?)?;
    let tolerance = ToleranceSpec::new(a.usl, a.p)?;
    let options = SimulationOptions {
        method: method_for(a.method, &mesh),
        energy: a.energy,
        ..SimulationOptions::default()
    };
    let out = session.output_dir.clone().unwrap_or_else(|| ctx.out.clone());
    let nested = session.scenarios.len() > 1;
    for scenario_path in &session.scenarios {
        let scenario = Scenario::from_json(&read_text(scenario_path)?)?;
        let manipulated = scenario.build(&keys, &mesh)?;
        let ensemble = conditional_simulate(&spec, &mesh, &keys, &manipulated, &tolerance, a.count, &options, ctx.seed)?;
        let dir: PathBuf = if nested { out.join(stem(scenario_path)) } else { out.clone() };
        let created_at = chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true);
        let manifest = write_ensemble(&ensemble, &mesh, &dir, Some(created_at))?;
        let conformance = ensemble.conformance();
        let worst = conformance.iter().copied().fold(1.0, f64::min);
        let overall = conformance.iter().sum::<f64>() / conformance.len() as f64;
        println!(
            "{}: {} instances ({:?}), {} manipulated keys, conformance mean {overall:.4} min {worst:.4}",
            dir.display(),
            manifest.instances.len(),
            manifest.method,
            manipulated.len()
        );
    }
    if write_session {
        write_json(&out.join("session.json"), &session)?;
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct AxisReport {
    axis: String,
    #[serde(flatten)]
    test: AxisTest,
}

#[derive(Debug, Serialize)]
struct BatchReport {
    schema: u32,
    model: BatchModel,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    comparison: Vec<AxisReport>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    samples: Vec<KernelSpec>,
}

fn read_fits(paths: &[PathBuf]) -> CliResult<Vec<FitResult>> {
    paths.iter().map(|p| Ok(FitResult::from_json(&read_text(p)?)?)).collect()
}

pub(crate) fn batch(ctx: &Context, a: &BatchArgs) -> CliResult<()> {
    let fits = read_fits(&a.fits)?;
    let model = characterize_batch(&fits)?;
    let names: Vec<String> = fits[0]
        .spec
        .param_names()
        .into_iter()
        .filter(|n| n.contains(".length"))
        .collect();
    let mut comparison = Vec::new();
    if !a.compare.is_empty() {
        let other = read_fits(&a.compare)?;
        for (axis, test) in names.iter().zip(compare_batches(&fits, &other)?) {
            println!("{axis}: t = {:.4}, df = {:.2}, p = {:.4e}", test.t, test.df, test.p);
            comparison.push(AxisReport {
                axis: axis.clone(),
                test,
            });
        }
    }
    let samples = (0..a.sample as u64)
        .map(|i| Ok(sample_batch_params(&model, &fits[0].spec, &RandomSource::new(ctx.seed, i))?))
        .collect::<CliResult<Vec<_>>>()?;
    write_json(
        &ctx.out.join("batch.json"),
        &BatchReport {
            schema: SCHEMA,
            model,
            comparison,
            samples,
        },
    )
}

pub(crate) fn export(ctx: &Context, a: &ExportArgs) -> CliResult<()> {
    let mesh = load_mesh_auto(&a.mesh)?;
    let field = load_deviation_ply(&a.field, &mesh)?;
    let (ext, text) = match a.format {
        ExportFormat::Vtk => ("vtk", deviation_vtk(&mesh, &field.values)),
        ExportFormat::Csv => {
            let mut s = String::from("node,x,y,z,deviation\n");
            for (i, (p, v)) in mesh.nodes().iter().zip(&field.values).enumerate() {
                s.push_str(&format!("{i},{},{},{},{v}\n", p[0], p[1], p[2]));
            }
            ("csv", s)
        }
    };
    let path = ctx.out.join(format!("{}.{ext}", stem(&a.field)));
    write_file(&path, text)?;
    println!("wrote {}", path.display());
    Ok(())
}
