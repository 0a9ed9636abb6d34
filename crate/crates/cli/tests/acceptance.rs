//! Acceptance criteria, one PASS/FAIL line each. Exits nonzero if any fail.

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use l2mreg::assoc::{associate, build_wall_buffers};
use l2mreg::extract::{
    extract_wall_segment, grow_seed_plane, ExtractParams, GcParams, GrowthMode, MergedPlane,
};
use l2mreg::geom::{fit_plane, PlaneParams, Point3, Quaternion, RigidTransform, Vec3};
use l2mreg::ghm::jacobian_check;
use l2mreg::ground::GroundModel;
use l2mreg::io::{read_report, write_report, DtmGrid};
use l2mreg::metrics::{
    compute_metrics, compute_metrics_dropping_empty, generate_check_points, mean_and_std, CheckPoint,
    CheckPointSet, CylinderParams,
};
use l2mreg::pipeline::{
    establish_all, inputs_from_bundle, register, with_workers, Inputs, PipelineConfig, PipelineError,
};
use l2mreg::plinth::{localize_representative_subspace, LocalizeParams};
use l2mreg::seed::derive_seed;
use l2mreg::spatial::Index3;
use l2mreg::strategy::Registry;
use l2mreg::synth::{generate, oracle_metrics, Label, SceneBundle, SceneSpec, TruthSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn scene(spec: SceneSpec) -> SceneBundle {
    generate(&spec).expect("valid scene")
}

fn run(inputs: &Inputs, cfg: &PipelineConfig) -> Result<l2mreg::pipeline::PipelineOutput, PipelineError> {
    register(inputs, cfg, &Registry::default())
}

type Criterion = (&'static str, fn() -> Outcome);

fn criteria() -> Vec<Criterion> {
    vec![
        ("1 noiseless exact recovery", noiseless_exact_recovery),
        ("2 uncertainty awareness", uncertainty_awareness),
        ("3 decoupling", decoupling),
        ("4 rank deficiency", rank_deficiency),
        ("5 jacobian correctness", jacobian_correctness),
        ("6 cut-off localization purity", localization_purity),
        ("7 segment growth", segment_growth),
        ("8 metrics oracle", metrics_oracle),
        ("9 vertical estimate", vertical_estimate),
        ("10 determinism", determinism),
        ("11 efficiency", efficiency),
    ]
}

fn main() -> ExitCode {
    // Optional criterion numbers as arguments select a subset.
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let selected: Vec<_> = criteria()
        .into_iter()
        .filter(|(name, _)| {
            only.is_empty() || only.iter().any(|n| name.split(' ').next() == Some(n.as_str()))
        })
        .collect();
    let total = selected.len();
    let mut failed = 0;
    for (name, f) in selected {
        let start = Instant::now();
        let o = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        if !o.pass {
            failed += 1;
        }
        println!(
            "{} #{name}: {} [{:.1} s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("{} of {total} criteria passed", total - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn noiseless_exact_recovery() -> Outcome {
    let b = scene(SceneSpec {
        facade_offset: 0.0,
        noise_sigma: 0.0,
        density: 120.0,
        ..SceneSpec::default()
    });
    let inputs = inputs_from_bundle(&b, true);
    let start = Instant::now();
    let out = match run(&inputs, &PipelineConfig::default()) {
        Ok(o) => o,
        Err(e) => return outcome(false, format!("pipeline failed: {e}")),
    };
    let secs = start.elapsed().as_secs_f64();
    let (rot, h, v) = oracle_metrics(&b.truth, &out.transform);
    let d = out.transform.translation - b.truth.translation;
    let pass = rot < 1e-6 && d.x.abs() < 1e-6 && d.y.abs() < 1e-6 && v < 1e-6 && secs < 10.0;
    outcome(
        pass,
        format!(
            "{} points: rotation {rot:.2e} deg, horizontal {h:.2e} m, vertical {v:.2e} m (limits 1e-6), {secs:.2} s (limit 10 s)",
            b.cloud.len()
        ),
    )
}

fn uncertainty_awareness() -> Outcome {
    // Two adjacent walls, as seen from a street corner. With every side
    // visible a uniform facade offset inflates the footprint symmetrically
    // and cancels out of the translation.
    let b = scene(SceneSpec {
        facade_offset: 0.10,
        plinth_height: 0.5,
        height: 6.0,
        noise_sigma: 0.005,
        visible_walls: vec![0, 1],
        ..SceneSpec::default()
    });
    let inputs = inputs_from_bundle(&b, true);
    let horiz = |strategy: &str| -> Result<f64, String> {
        let cfg = PipelineConfig {
            strategy: strategy.into(),
            ..PipelineConfig::default()
        };
        run(&inputs, &cfg)
            .map(|o| oracle_metrics(&b.truth, &o.transform).1)
            .map_err(|e| format!("{strategy}: {e}"))
    };
    match (horiz("plinth"), horiz("whole-wall")) {
        (Ok(p), Ok(w)) => outcome(
            p < 0.005 && w > 0.050,
            format!(
                "plinth horizontal error {:.2} mm (limit 5), whole-wall {:.1} mm (needs > 50)",
                p * 1e3,
                w * 1e3
            ),
        ),
        (p, w) => outcome(false, format!("run failed: {p:?} / {w:?}")),
    }
}

fn biased(dtm: &DtmGrid, bias: f64) -> DtmGrid {
    let mut d = dtm.clone();
    for row in 0..d.n_rows {
        for col in d.n_cols / 2..d.n_cols {
            d.elevations[row * d.n_cols + col] += bias;
        }
    }
    d
}

fn decoupling() -> Outcome {
    let b = scene(SceneSpec::default());
    let with_dtm = |dtm: DtmGrid| Inputs {
        cloud: b.cloud.clone(),
        walls: b.walls.clone(),
        ground: Some(Box::new(dtm) as Box<dyn GroundModel>),
    };
    let clean = with_dtm(b.dtm.clone());
    let shifted = with_dtm(biased(&b.dtm, 0.30));

    // Parameter change, and the largest horizontal move between the two
    // registrations of a point at any model vertex.
    let vertices: Vec<Point3<f64>> = b
        .walls
        .walls
        .iter()
        .flat_map(|w| w.vertices.iter().copied())
        .collect();
    let horizontal_delta = |cfg: &PipelineConfig| -> Result<(f64, f64), PipelineError> {
        let a = run(&clean, cfg)?.transform;
        let c = run(&shifted, cfg)?.transform;
        let dq = (0..4)
            .map(|i| (a.rotation.to_array()[i] - c.rotation.to_array()[i]).abs())
            .fold(0.0, f64::max);
        let dt = (a.translation - c.translation).xy().abs().max();
        let moved = vertices
            .iter()
            .map(|v| (a.apply(v) - c.apply(v)).xy().norm())
            .fold(0.0, f64::max);
        Ok((dq.max(dt), moved))
    };
    let decoupled = horizontal_delta(&PipelineConfig::default());
    let coupled = horizontal_delta(&PipelineConfig {
        pseudo_plane: false,
        ..PipelineConfig::default()
    });
    match (decoupled, coupled) {
        (Ok((dp, dm)), Ok((cp, cm))) => outcome(
            dp < 1e-9 && dm < 1e-9 && cm > 1e-3,
            format!(
                "0.30 m bias on half the terrain: pseudo-plane max change in q, t_x, t_y {dp:.1e} (limit 1e-9); \
                 coupled max change {cp:.1e}, horizontal shift of the registered walls {:.1} mm (needs > 1)",
                cm * 1e3
            ),
        ),
        (d, c) => outcome(false, format!("run failed: {:?} / {:?}", d.err(), c.err())),
    }
}

fn rank_deficiency() -> Outcome {
    let b = scene(SceneSpec::default());
    let inputs = inputs_from_bundle(&b, false);
    let coupled = run(
        &inputs,
        &PipelineConfig {
            pseudo_plane: false,
            skip_vertical: true,
            ..PipelineConfig::default()
        },
    );
    let refused = matches!(
        coupled,
        Err(PipelineError::RankDeficient | PipelineError::Degenerate(_))
    );
    let constrained = run(
        &inputs,
        &PipelineConfig {
            skip_vertical: true,
            ..PipelineConfig::default()
        },
    );
    match constrained {
        Ok(o) => {
            let tz = o.stage1.translation.z;
            outcome(
                refused && tz.abs() <= 1e-9 && o.solver.converged,
                format!(
                    "facade-only without pseudo-plane: {}; with pseudo-plane converged in {} iterations, |t_z| = {:.1e}",
                    match &coupled {
                        Err(e) => e.to_string(),
                        Ok(_) => "solved (expected a refusal)".into(),
                    },
                    o.solver.iterations,
                    tz.abs()
                ),
            )
        }
        Err(e) => outcome(false, format!("pseudo-plane run failed: {e}")),
    }
}

fn jacobian_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let unit = |rng: &mut ChaCha8Rng| loop {
        let v = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        if v.norm() > 0.1 {
            return v.normalize();
        }
    };
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let axis = unit(&mut rng);
        let q = Quaternion::from_axis_angle(
            &axis,
            rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
        );
        let t = Vec3::new(
            rng.random_range(-5.0..5.0),
            rng.random_range(-5.0..5.0),
            rng.random_range(-5.0..5.0),
        );
        let samples: Vec<(PlaneParams, Point3<f64>)> = (0..4)
            .map(|_| {
                let n = unit(&mut rng);
                let p = Point3::new(
                    rng.random_range(-20.0..20.0),
                    rng.random_range(-20.0..20.0),
                    rng.random_range(-5.0..15.0),
                );
                (PlaneParams::new(n, rng.random_range(-10.0..10.0)), p)
            })
            .collect();
        worst = worst.max(jacobian_check(&samples, &RigidTransform::new(q, t)));
    }
    outcome(
        worst < 1e-6,
        format!("1000 configurations, max relative deviation {worst:.2e} (limit 1e-6)"),
    )
}

fn localization_purity() -> Outcome {
    let (t_dis, t_alpha) = (0.02, 10.0);
    let mut worst_plinth = 1.0f64;
    let mut worst_facade = 0.0f64;
    let mut cells = 0;
    let mut misses = Vec::new();
    for delta in [0.03, 0.05, 0.10, 0.20] {
        for sigma in [0.0, 0.002, 0.005] {
            if delta <= 3.0 * sigma + t_dis {
                continue;
            }
            for seed in 1..=3 {
                let b = scene(SceneSpec {
                    facade_offset: delta,
                    noise_sigma: sigma,
                    seed,
                    ..SceneSpec::default()
                });
                let buffers = build_wall_buffers(&b.walls.walls, 1.0).expect("buffers");
                let assoc = associate(&b.cloud, &buffers, Some((&b.dtm as &dyn GroundModel, 0.3)))
                    .expect("association");
                for (id, nbrs) in &assoc.per_wall {
                    cells += 1;
                    let pts: Vec<Point3<f64>> = nbrs.iter().map(|&i| b.cloud.points[i]).collect();
                    let lp = LocalizeParams::for_neighbourhood(t_dis, t_alpha, pts.len());
                    let s = match localize_representative_subspace(&pts, &lp, derive_seed(seed, id)) {
                        Ok(s) => s,
                        Err(e) => {
                            misses.push(format!("δ={delta} σ={sigma} seed {seed} {id}: {e}"));
                            continue;
                        }
                    };
                    let n = s.indices.len() as f64;
                    let count =
                        |l: Label| s.indices.iter().filter(|&&k| b.labels[nbrs[k]] == l).count() as f64;
                    let (plinth, facade) = (count(Label::Plinth) / n, count(Label::Facade) / n);
                    worst_plinth = worst_plinth.min(plinth);
                    worst_facade = worst_facade.max(facade);
                    if plinth < 0.95 || facade > 0.01 {
                        misses.push(format!(
                            "δ={delta} σ={sigma} seed {seed} {id}: {:.1}% plinth, {:.1}% facade",
                            plinth * 100.0,
                            facade * 100.0
                        ));
                    }
                }
            }
        }
    }
    outcome(
        misses.is_empty(),
        format!(
            "{cells} wall cases with δ > 3σ + t_dis: worst {:.1}% plinth (needs ≥ 95), worst {:.2}% facade (limit 1){}",
            worst_plinth * 100.0,
            worst_facade * 100.0,
            if misses.is_empty() {
                String::new()
            } else {
                format!("; misses: {}", misses.join(", "))
            }
        ),
    )
}

/// A noisy 9 × 3 m wall, flat or bowed along `radius` (1 cm sagitta at
/// 1000 m), split into three 3 m stripes given as separate merged planes,
/// plus clutter as a fourth. Growth from the first stripe follows the bend.
fn bowed_stripes(n: usize, sigma: f64, seed: u64, radius: f64) -> (Vec<Point3<f64>>, Vec<MergedPlane>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pts = Vec::with_capacity(n + 300);
    let mut groups = vec![Vec::new(); 4];
    for _ in 0..n {
        let u: f64 = rng.random_range(0.0..9.0);
        let z = rng.random_range(0.0..3.0);
        let bow = if radius.is_finite() {
            radius - (radius * radius - (u - 4.5).powi(2)).sqrt()
        } else {
            0.0
        };
        let e = sigma * (rng.random::<f64>() + rng.random::<f64>() + rng.random::<f64>() - 1.5) * 2.0;
        groups[((u / 3.0) as usize).min(2)].push(pts.len());
        pts.push(Point3::new(bow + e, u, z));
    }
    for _ in 0..300 {
        groups[3].push(pts.len());
        pts.push(Point3::new(
            rng.random_range(-0.5..0.5),
            rng.random_range(0.0..9.0),
            rng.random_range(0.0..3.0),
        ));
    }
    let merged = groups
        .into_iter()
        .map(|indices| {
            let sub: Vec<Point3<f64>> = indices.iter().map(|&i| pts[i]).collect();
            MergedPlane {
                plane: fit_plane(&sub).expect("plane"),
                indices,
            }
        })
        .collect();
    (pts, merged)
}

fn segment_growth() -> Outcome {
    let t_dis = 0.02;
    let gc = GcParams::from_alpha(t_dis, 10.0);
    let mut invariant_ok = true;
    let mut worst = 0.0f64;
    let mut largest = 0;
    let mut grown = 0;
    let mut cases = 0;
    let mut members_within = |members: &[usize], plane: &PlaneParams, pts: &[Point3<f64>]| {
        invariant_ok &= members.iter().all(|&i| plane.distance(&pts[i]) <= t_dis);
    };

    for radius in [f64::INFINITY, 1000.0] {
        for seed in 1..=10 {
            let (pts, merged) = bowed_stripes(4000, 0.005, seed, radius);
            largest = largest.max(pts.len());
            let (Ok(b), Ok(p)) = (
                grow_seed_plane(&pts, &merged, &gc, GrowthMode::default()),
                grow_seed_plane(&pts, &merged, &gc, GrowthMode::PerPoint),
            ) else {
                return outcome(false, format!("growth failed on bowed wall {seed}"));
            };
            cases += 1;
            grown += p.2;
            members_within(&b.0, &b.1, &pts);
            members_within(&p.0, &p.1, &pts);
            let a: BTreeSet<usize> = b.0.iter().copied().collect();
            let c: BTreeSet<usize> = p.0.iter().copied().collect();
            worst = worst.max(a.symmetric_difference(&c).count() as f64 / a.len().max(c.len()) as f64);
        }
    }

    // End-to-end on generated walls: membership invariant in both modes.
    let mut segments = 0;
    for seed in 1..=3 {
        let b = scene(SceneSpec {
            width: 10.0,
            length: 8.0,
            density: 60.0,
            occlusion_fraction: 0.3,
            clutter_points: 300,
            seed,
            ..SceneSpec::default()
        });
        let buffers = build_wall_buffers(&b.walls.walls, 1.0).expect("buffers");
        let assoc =
            associate(&b.cloud, &buffers, Some((&b.dtm as &dyn GroundModel, 0.3))).expect("association");
        for (id, nbrs) in &assoc.per_wall {
            let wall = b.walls.wall(id).expect("wall");
            let pts: Vec<Point3<f64>> = nbrs.iter().map(|&i| b.cloud.points[i]).collect();
            largest = largest.max(pts.len());
            for growth in [GrowthMode::default(), GrowthMode::PerPoint] {
                let params = ExtractParams {
                    growth,
                    ..ExtractParams::new(t_dis, 10.0)
                };
                match extract_wall_segment(&pts, wall, &params, derive_seed(seed, id)) {
                    Ok(seg) => {
                        segments += 1;
                        members_within(&seg.indices, &seg.plane, &pts);
                    }
                    Err(e) => return outcome(false, format!("extraction failed on scene {seed} {id}: {e}")),
                }
            }
        }
    }
    outcome(
        invariant_ok && grown > 0 && worst < 0.005 && largest <= 5000,
        format!(
            "{cases} flat and bowed striped walls ({grown} points accepted by growth) and {segments} generated-wall segments, \
             ≤ {largest} points each: every member within t_dis: {invariant_ok}; \
             batched vs per-point refit index sets differ by at most {:.3}% (limit 0.5)",
            worst * 100.0
        ),
    )
}

fn metrics_oracle() -> Outcome {
    // One cloud point per check point, offset along the reference normal.
    let offsets = [0.01, 0.02, 0.03];
    let check = CheckPointSet {
        horizontal: (0..3)
            .map(|i| CheckPoint {
                position: Point3::new(0.0, 2.0 * i as f64, 1.0),
                normal: Vec3::x(),
            })
            .collect(),
        vertical: Vec::new(),
    };
    let cloud: Vec<Point3<f64>> = offsets
        .iter()
        .enumerate()
        .map(|(i, d)| Point3::new(*d, 2.0 * i as f64, 1.0))
        .collect();
    let index = Index3::new(&cloud);
    let m = compute_metrics(&check, &cloud, &index, &CylinderParams::default()).expect("metrics");
    let hand_mean = (0.01 + 0.02 + 0.03) / 3.0;
    let hand_std =
        (((0.01f64 - hand_mean).powi(2) + (0.02 - hand_mean).powi(2) + (0.03 - hand_mean).powi(2)) / 2.0)
            .sqrt();
    let exact = m.err_h == hand_mean && m.std_h == hand_std && m.distances_h == offsets;
    let (mm, ms) = mean_and_std(&offsets);
    let consistent = mm == hand_mean
        && ms == hand_std
        && (hand_mean - 0.02).abs() < 1e-15
        && (hand_std - 0.01).abs() < 1e-15;

    let b = scene(SceneSpec {
        facade_offset: 0.0,
        noise_sigma: 0.0,
        ..SceneSpec::default()
    });
    let moved: Vec<Point3<f64>> = b.cloud.points.iter().map(|p| b.truth.apply(p)).collect();
    let idx = Index3::new(&moved);
    let set = generate_check_points(&b.walls.walls, Some(&b.dtm));
    let perfect =
        compute_metrics_dropping_empty(&set, &moved, &idx, &CylinderParams::default()).expect("metrics");
    let zero = perfect.err_h.abs() < 1e-9 && perfect.err_v.abs() < 1e-9;
    outcome(
        exact && consistent && zero,
        format!(
            "Err {:?} Std {:?} against hand values {hand_mean:?} {hand_std:?} (bit-exact: {exact}); \
             perfect registration Err_h {:.1e}, Err_v {:.1e} over {}+{} check points (limit 1e-9)",
            m.err_h,
            m.std_h,
            perfect.err_h,
            perfect.err_v,
            perfect.distances_h.len(),
            perfect.distances_v.len()
        ),
    )
}

fn vertical_estimate() -> Outcome {
    let b = scene(SceneSpec {
        noise_sigma: 0.005,
        ground_slope: [0.04, -0.025],
        truth: TruthSpec {
            translation: [0.10, -0.05, -0.12],
            ..SceneSpec::default().truth
        },
        ..SceneSpec::default()
    });
    let inputs = inputs_from_bundle(&b, true);
    match run(&inputs, &PipelineConfig::default()) {
        Ok(o) => {
            let tz = o.transform.translation.z;
            outcome(
                (tz + 0.12).abs() < 0.003,
                format!(
                    "sloped terrain, true offset -0.120 m: estimated {tz:.4} m, error {:.2} mm (limit 3)",
                    (tz + 0.12).abs() * 1e3
                ),
            )
        }
        Err(e) => outcome(false, format!("pipeline failed: {e}")),
    }
}

fn determinism() -> Outcome {
    let b = scene(SceneSpec {
        occlusion_fraction: 0.2,
        clutter_points: 500,
        ..SceneSpec::default()
    });
    let inputs = inputs_from_bundle(&b, true);
    let dir = tempfile::tempdir().expect("tempdir");
    let report = |name: &str, workers: usize| -> Result<(Vec<u8>, RigidTransform), String> {
        let cfg = PipelineConfig {
            seed: 11,
            workers,
            ..PipelineConfig::default()
        };
        let out = run(&inputs, &cfg).map_err(|e| e.to_string())?;
        let path = dir.path().join(name);
        write_report(&path, &out.report).map_err(|e| e.to_string())?;
        Ok((std::fs::read(&path).map_err(|e| e.to_string())?, out.transform))
    };
    match (
        report("a.json", 0),
        report("b.json", 0),
        report("w1.json", 1),
        report("w8.json", 8),
    ) {
        (Ok(a), Ok(b2), Ok(w1), Ok(w8)) => {
            let same_bytes = a.0 == b2.0;
            let same_transform = w1.1 == w8.1;
            outcome(
                same_bytes && same_transform,
                format!(
                    "repeat run byte-identical report: {same_bytes}; workers 1 vs 8 identical transform: {same_transform}"
                ),
            )
        }
        r => outcome(
            false,
            format!("run failed: {:?}", (r.0.err(), r.1.err(), r.2.err(), r.3.err())),
        ),
    }
}

fn bin(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_l2mreg"))
        .args(args)
        .output()
        .expect("spawn l2mreg")
}

fn efficiency() -> Outcome {
    let spec = SceneSpec {
        width: 40.0,
        length: 30.0,
        height: 15.0,
        density: 2250.0,
        ground_density: 100.0,
        ..SceneSpec::default()
    };
    let dir = tempfile::tempdir().expect("tempdir");
    let spec_path = dir.path().join("scene.toml");
    std::fs::write(&spec_path, toml_spec(&spec)).expect("write spec");
    let out = dir.path().join("scene");
    let s = |p: &Path| p.to_str().expect("utf-8 path").to_owned();
    let o = bin(&[
        "synth",
        "--spec",
        &s(&spec_path),
        "--out",
        &s(&out),
        "--format",
        "ply",
    ]);
    if !o.status.success() {
        return outcome(
            false,
            format!("synth failed: {}", String::from_utf8_lossy(&o.stderr)),
        );
    }
    let n: usize = String::from_utf8_lossy(&o.stdout)
        .split_whitespace()
        .next()
        .and_then(|w| w.parse().ok())
        .unwrap_or(0);
    let report = dir.path().join("report.json");
    let start = Instant::now();
    let o = bin(&[
        "register",
        "--cloud",
        &s(&out.join("cloud.ply")),
        "--walls",
        &s(&out.join("walls.json")),
        "--dtm",
        &s(&out.join("dtm.asc")),
        "--output",
        &s(&report),
    ]);
    let secs = start.elapsed().as_secs_f64();
    let full_ok = o.status.success() && read_report(&report).is_ok() && secs < 120.0;
    if !o.status.success() {
        return outcome(
            false,
            format!("register failed: {}", String::from_utf8_lossy(&o.stderr)),
        );
    }

    // Per-wall stages in process, on the same scene.
    let b = scene(spec);
    let cfg = PipelineConfig::default();
    let registry = Registry::default();
    let buffers = build_wall_buffers(&b.walls.walls, cfg.thickness).expect("buffers");
    let assoc = associate(
        &b.cloud,
        &buffers,
        Some((&b.dtm as &dyn GroundModel, cfg.ground_band)),
    )
    .expect("association");
    let strategy = registry.get(&cfg.strategy).expect("default strategy");
    let params = cfg.extract_params();
    let timed = |workers: usize| {
        let start = Instant::now();
        with_workers(workers, || {
            establish_all(&b.cloud, &b.walls, &assoc, strategy.as_ref(), &params, cfg.seed)
        });
        start.elapsed().as_secs_f64()
    };
    let one = timed(1);
    let four = timed(4);
    let speedup = one / four;
    let cores = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    outcome(
        full_ok && speedup >= 2.5,
        format!(
            "{n} points from PLY: full run {secs:.1} s (limit 120); per-wall stages {one:.1} s at 1 worker, \
             {four:.1} s at 4, speedup {speedup:.2}x (needs ≥ 2.5; {cores} core(s) available)"
        ),
    )
}

fn toml_spec(spec: &SceneSpec) -> String {
    format!(
        "width = {:?}\nlength = {:?}\nheight = {:?}\ndensity = {:?}\nground_density = {:?}\n",
        spec.width, spec.length, spec.height, spec.density, spec.ground_density
    )
}
