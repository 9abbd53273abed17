use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use shapemorph::geometry::Mesh;
use shapemorph::io::{deviation_ply, load_mesh_auto, parse_ply};
use shapemorph::kernels::{Family, KernelSpec};
use shapemorph::simulation::{node_points, sample_cholesky, RandomSource};

fn plate_obj(nx: usize, ny: usize, h: f64) -> String {
    let mut s = String::new();
    for j in 0..ny {
        for i in 0..nx {
            s.push_str(&format!("v {} {} 0\n", i as f64 * h, j as f64 * h));
        }
    }
    for j in 0..ny - 1 {
        for i in 0..nx - 1 {
            let a = j * nx + i + 1;
            s.push_str(&format!("f {} {} {}\nf {} {} {}\n", a, a + 1, a + nx + 1, a, a + nx + 1, a + nx));
        }
    }
    s
}

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new() -> Self {
        Self {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn write(&self, name: &str, text: &str) -> PathBuf {
        let p = self.path(name);
        std::fs::write(&p, text).unwrap();
        p
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_shapemorph"))
            .current_dir(self.dir.path())
            .args(args)
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let out = self.run(args);
        assert!(
            out.status.success(),
            "{args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8(out.stdout).unwrap()
    }

    fn json(&self, name: &str) -> Value {
        serde_json::from_str(&std::fs::read_to_string(self.path(name)).unwrap()).unwrap()
    }
}

fn deviations(path: &Path) -> Vec<f64> {
    parse_ply(&std::fs::read(path).unwrap()).unwrap().vertex_properties["deviation"].clone()
}

/// Plate mesh plus a deviation field drawn from a known Matérn 5/2 kernel.
fn synthetic_part(ws: &Workspace, lengths: [f64; 2], seed: u64) -> Mesh {
    let obj = ws.write("plate.obj", &plate_obj(20, 20, 5.0));
    let mesh = load_mesh_auto(&obj).unwrap();
    let spec = KernelSpec::single(Family::Matern52, 1.0, lengths.to_vec()).unwrap();
    let z = sample_cholesky(&spec, &node_points(&mesh, 2).unwrap(), &RandomSource::new(seed, 0)).unwrap();
    ws.write("plate_dev.ply", &deviation_ply(&mesh, &z));
    mesh
}

#[test]
fn deviation_against_coincident_scan_is_zero() {
    let ws = Workspace::new();
    ws.write("plate.obj", &plate_obj(6, 5, 2.0));
    let cop: String = (0..30).map(|i| format!("{} {} 0\n", (i % 6) as f64 * 2.0, (i / 6) as f64 * 2.0)).collect();
    ws.write("scan.xyz", &cop);
    ws.ok(&["deviation", "--mesh", "plate.obj", "--cop", "scan.xyz", "--max-dist", "5"]);
    let summary = ws.json("plate_dev.json");
    assert_eq!(summary["schema"], 1);
    assert_eq!(summary["rms"], 0.0);
    assert_eq!(summary["n_nodes"], 30);
    assert_eq!(deviations(&ws.path("plate_dev.ply")), vec![0.0; 30]);
}

#[test]
fn deviation_from_displacement_projects_on_normals() {
    let ws = Workspace::new();
    ws.write("plate.obj", &plate_obj(3, 3, 1.0));
    ws.write("disp.txt", &"0.5 0.1 0.25\n".repeat(9));
    ws.ok(&["deviation", "--mesh", "plate.obj", "--displacement", "disp.txt", "--name", "d"]);
    let d = deviations(&ws.path("d.ply"));
    assert!(d.iter().all(|v| (v - 0.25).abs() < 1e-7), "{d:?}");
}

#[test]
fn missing_inputs_exit_with_io_code() {
    let ws = Workspace::new();
    ws.write("plate.obj", &plate_obj(3, 3, 1.0));
    let out = ws.run(&["deviation", "--mesh", "plate.obj", "--cop", "absent.ply"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.ply"));
}

#[test]
fn invalid_arguments_exit_with_validation_code() {
    let ws = Workspace::new();
    ws.write("plate.obj", &plate_obj(3, 3, 1.0));
    for args in [
        &["keypoints", "--mesh", "plate.obj", "--voxel-size", "0"][..],
        &["keypoints", "--mesh", "plate.obj", "--voxel-size", "-1"][..],
        &["keypoints", "--mesh", "plate.obj"][..],
        &["fit", "--mesh", "plate.obj", "--deviation", "x.ply", "--voxel-size", "1", "--family", "cubic"][..],
    ] {
        assert_eq!(ws.run(args).status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn keypoints_file_round_trips() {
    let ws = Workspace::new();
    ws.write("plate.obj", &plate_obj(10, 10, 1.0));
    let out = ws.ok(&["keypoints", "--mesh", "plate.obj", "--voxel-size", "2.5"]);
    assert!(out.contains("key points"));
    let k = ws.json("keypoints.json");
    assert_eq!(k["schema"], 1);
    let n = k["indices"].as_array().unwrap().len();
    assert_eq!(k["coordinates"].as_array().unwrap().len(), n);
    // 9 units across with 2.5 mm voxels gives 4 voxels per axis.
    assert_eq!(n, 16);
}

#[test]
fn fit_recovers_known_lengths() {
    let ws = Workspace::new();
    synthetic_part(&ws, [30.0, 10.0], 2000);
    ws.ok(&["--seed", "3", "fit", "--mesh", "plate.obj", "--deviation", "plate_dev.ply", "--voxel-size", "5", "--dim", "2"]);
    let fit = ws.json("fit.json");
    assert_eq!(fit["schema"], 1);
    let l = &fit["terms"][0]["lengths"];
    let (lx, ly) = (l[0].as_f64().unwrap(), l[1].as_f64().unwrap());
    assert!((lx / 30.0 - 1.0).abs() < 0.2 && (ly / 10.0 - 1.0).abs() < 0.2, "{lx} {ly}");
    assert_eq!(fit["terms"][0]["family"], "matern52");
}

fn prepare_simulation(ws: &Workspace) {
    ws.write("plate.obj", &plate_obj(21, 11, 10.0));
    ws.ok(&["keypoints", "--mesh", "plate.obj", "--voxel-size", "30"]);
    ws.write(
        "spec.json",
        r#"{"schema": 1, "D": 2, "terms": [{"family": "matern52", "sigma_f2": 1.0, "lengths": [60.0, 60.0]}]}"#,
    );
    ws.write(
        "bend.json",
        r#"{"schema": 1, "type": "bend", "axis": {"point": [0, 0, 0], "direction": [0, 1, 0]}, "max_dev": 3.0}"#,
    );
    ws.write("form.json", r#"{"type": "form_only"}"#);
}

fn simulate(ws: &Workspace, out: &str, scenario: &str, extra: &[&str]) {
    let mut args = vec![
        "--output-dir", out, "simulate", "--mesh", "plate.obj", "--spec", "spec.json", "--keypoints",
        "keypoints.json", "--scenario", scenario,
    ];
    args.extend_from_slice(extra);
    ws.ok(&args);
}

#[test]
fn bend_scenario_pins_keys_and_is_reproducible() {
    let ws = Workspace::new();
    prepare_simulation(&ws);
    let opts = ["--usl", "1", "--p", "0.95", "--count", "4", "--seed", "7"];
    simulate(&ws, "a", "bend.json", &opts);
    simulate(&ws, "b", "bend.json", &opts);

    let manifest = ws.json("a/manifest.json");
    assert_eq!(manifest["schema"], 1);
    assert!(manifest["created_at"].is_string());
    assert_eq!(manifest["instances"].as_array().unwrap().len(), 4);
    let keys = ws.json("keypoints.json");
    let indices: Vec<usize> = keys["indices"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap() as usize).collect();
    let selected = manifest["manipulated"]["selected"].as_array().unwrap();
    let targets = manifest["manipulated"]["deviations"].as_array().unwrap();
    let max_target = targets.iter().map(|t| t.as_f64().unwrap()).fold(0.0, f64::max);
    assert!((max_target - 3.0).abs() < 1e-12);
    for k in 0..4 {
        let z = deviations(&ws.path(&format!("a/instance_{k:04}.ply")));
        for (s, t) in selected.iter().zip(targets) {
            let node = indices[s.as_u64().unwrap() as usize];
            assert!((z[node] - t.as_f64().unwrap()).abs() < 1e-6);
        }
    }

    for name in ["instance_0000.ply", "instance_0003.ply", "mean.ply"] {
        assert_eq!(std::fs::read(ws.path(&format!("a/{name}"))).unwrap(), std::fs::read(ws.path(&format!("b/{name}"))).unwrap());
    }
    let strip = |mut v: Value| {
        v.as_object_mut().unwrap().remove("created_at");
        v
    };
    assert_eq!(strip(manifest), strip(ws.json("b/manifest.json")));
}

#[test]
fn form_only_ensemble_conforms() {
    let ws = Workspace::new();
    prepare_simulation(&ws);
    simulate(&ws, "out", "form.json", &["--usl", "2", "--p", "0.97", "--count", "200", "--method", "eigen"]);
    let manifest = ws.json("out/manifest.json");
    assert_eq!(manifest["method"], "eigen");
    let n_nodes = 21 * 11;
    let mut inside = 0;
    for k in 0..200 {
        let z = deviations(&ws.path(&format!("out/instance_{k:04}.ply")));
        inside += z.iter().filter(|v| v.abs() <= 2.0).count();
    }
    let frac = inside as f64 / (200 * n_nodes) as f64;
    assert!(frac >= 0.97, "{frac}");
}

#[test]
fn session_manifest_replays_a_run() {
    let ws = Workspace::new();
    prepare_simulation(&ws);
    let opts = ["--usl", "1", "--p", "0.95", "--count", "2", "--seed", "1"];
    simulate(&ws, "first", "bend.json", &opts);
    let session = ws.json("first/session.json");
    assert_eq!(session["schema"], 1);

    let mut args = vec!["--output-dir", "replay", "simulate", "--session", "first/session.json"];
    args.extend_from_slice(&opts);
    ws.ok(&args);
    assert_eq!(
        std::fs::read(ws.path("first/instance_0001.ply")).unwrap(),
        std::fs::read(ws.path("replay/instance_0001.ply")).unwrap()
    );

    // A session pointing at a different mesh is refused.
    let mut tampered = session.clone();
    tampered["mesh_checksum"] = Value::from("0000");
    ws.write("tampered.json", &tampered.to_string());
    let mut args = vec!["simulate", "--session", "tampered.json"];
    args.extend_from_slice(&opts);
    let out = ws.run(&args);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("checksum"));
}

#[test]
fn simulation_errors_map_to_exit_codes() {
    let ws = Workspace::new();
    prepare_simulation(&ws);
    let out = ws.run(&[
        "simulate", "--mesh", "plate.obj", "--spec", "spec.json", "--keypoints", "keypoints.json", "--scenario",
        "bend.json", "--usl", "1", "--p", "1.5",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let out = ws.run(&[
        "simulate", "--mesh", "plate.obj", "--spec", "spec.json", "--keypoints", "keypoints.json", "--scenario",
        "bend.json", "--usl", "1", "--p", "0.9", "--count", "0",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

fn fit_json(lengths: [f64; 3]) -> String {
    format!(
        r#"{{"schema": 1, "D": 3, "terms": [{{"family": "matern52", "sigma_f2": 1.0, "lengths": [{}, {}, {}]}}], "nll": 0.0, "converged": true, "iterations": 1}}"#,
        lengths[0], lengths[1], lengths[2]
    )
}

#[test]
fn batch_comparison_and_sampling() {
    let ws = Workspace::new();
    let mut a = Vec::new();
    let mut b = Vec::new();
    for i in 0..6 {
        let e = i as f64 - 2.5;
        a.push(ws.write(&format!("a{i}.json"), &fit_json([170.0 + 4.0 * e, 8.0 + 0.3 * e, 95.0 + 2.0 * e])));
        b.push(ws.write(&format!("b{i}.json"), &fit_json([120.0 - 3.0 * e, 12.0 + 0.2 * e, 60.0 - 2.5 * e])));
    }
    let mut args: Vec<String> = vec!["batch".into()];
    args.extend(a.iter().map(|p| p.display().to_string()));
    args.push("--compare".into());
    args.extend(b.iter().map(|p| p.display().to_string()));
    args.extend(["--sample".into(), "3".into()]);
    let argv: Vec<&str> = args.iter().map(String::as_str).collect();
    let stdout = ws.ok(&argv);
    assert!(stdout.contains("term0.length0"));

    let report = ws.json("batch.json");
    assert_eq!(report["schema"], 1);
    assert_eq!(report["model"]["count"], 6);
    assert!((report["model"]["mean"][0].as_f64().unwrap() - 170.0).abs() < 1e-9);
    for axis in report["comparison"].as_array().unwrap() {
        assert!(axis["p"].as_f64().unwrap() < 0.025);
    }
    assert_eq!(report["samples"].as_array().unwrap().len(), 3);
}

#[test]
fn batch_of_identical_fits_samples_the_mean() {
    let ws = Workspace::new();
    ws.write("f0.json", &fit_json([50.0, 20.0, 5.0]));
    ws.write("f1.json", &fit_json([50.0, 20.0, 5.0]));
    ws.ok(&["batch", "f0.json", "f1.json", "--sample", "2"]);
    let report = ws.json("batch.json");
    for s in report["samples"].as_array().unwrap() {
        assert_eq!(s["terms"][0]["lengths"], serde_json::json!([50.0, 20.0, 5.0]));
    }
    assert_eq!(ws.run(&["batch", "f0.json"]).status.code(), Some(2));
}

#[test]
fn export_writes_vtk_and_csv() {
    let ws = Workspace::new();
    ws.write("plate.obj", &plate_obj(4, 3, 1.0));
    ws.write("disp.txt", &"0 0 0.5\n".repeat(12));
    ws.ok(&["deviation", "--mesh", "plate.obj", "--displacement", "disp.txt"]);
    ws.ok(&["--output-dir", "plots", "export", "--mesh", "plate.obj", "--field", "plate_dev.ply"]);
    let vtk = std::fs::read_to_string(ws.path("plots/plate_dev.vtk")).unwrap();
    assert!(vtk.starts_with("# vtk DataFile"));
    ws.ok(&["export", "--mesh", "plate.obj", "--field", "plate_dev.ply", "--format", "csv"]);
    let csv = std::fs::read_to_string(ws.path("plate_dev.csv")).unwrap();
    assert_eq!(csv.lines().count(), 13);
    assert_eq!(csv.lines().nth(2).unwrap(), "1,1,0,0,0.5");
}
