use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use l2mreg::extract::GrowthMode;
use l2mreg::io::{read_report, write_report};
use l2mreg::pipeline::{extract_planes, register, Inputs, PipelineConfig, PipelineError};
use l2mreg::strategy::Registry;
use l2mreg::synth::{generate, oracle_metrics, read_truth, write_bundle, CloudFormat, SceneSpec};

#[derive(Parser)]
#[command(
    name = "l2mreg",
    version,
    about = "Fine registration of building point clouds to LoD2 wall models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Register a point cloud to a wall model and write a JSON report.
    Register(RegisterArgs),
    /// Generate a synthetic scene with a known misregistration.
    Synth(SynthArgs),
    /// Compare reports against a ground-truth transform.
    Eval(EvalArgs),
    /// Run association and plane extraction only, writing per-wall segments.
    ExtractPlanes(RegisterArgs),
}

#[derive(Args)]
struct RegisterArgs {
    /// Point cloud (ASCII xyz or binary PLY).
    #[arg(long)]
    cloud: Option<PathBuf>,
    /// Wall model JSON.
    #[arg(long)]
    walls: Option<PathBuf>,
    /// Ground reference file (ESRI ASCII grid, or a surface model with --ground-kind surface).
    #[arg(long)]
    dtm: Option<PathBuf>,
    #[arg(long, value_parser = ["dtm", "surface"])]
    ground_kind: Option<String>,
    /// Report path (register) or segment directory (extract-planes).
    #[arg(long, short)]
    output: Option<PathBuf>,
    /// TOML file with any pipeline setting; explicit flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Correspondence strategy: plinth or whole-wall.
    #[arg(long)]
    strategy: Option<String>,
    /// Total wall buffer thickness, meters.
    #[arg(long = "buffer")]
    thickness: Option<f64>,
    #[arg(long)]
    ground_band: Option<f64>,
    #[arg(long)]
    t_dis: Option<f64>,
    /// Degrees.
    #[arg(long)]
    t_alpha: Option<f64>,
    /// Refit the seed plane after every accepted point instead of in batches.
    #[arg(long)]
    per_point_growth: bool,
    #[arg(long)]
    radius: Option<f64>,
    #[arg(long)]
    min_pairs: Option<usize>,
    #[arg(long)]
    denoise_k: Option<usize>,
    #[arg(long)]
    denoise_sigma: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for per-wall stages; 0 uses every core.
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    skip_vertical: bool,
    /// Solve all six degrees of freedom, using the ground reference as a correspondence.
    #[arg(long)]
    no_pseudo_plane: bool,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    no_metrics: bool,
    /// Write intermediate stage outputs into this directory.
    #[arg(long)]
    dump_stages: Option<PathBuf>,
}

impl RegisterArgs {
    fn config(&self) -> anyhow::Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                toml::from_str(&text).map_err(|e| PipelineError::Config(e.to_string()))?
            }
            None => PipelineConfig::default(),
        };
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = &self.$field {
                    cfg.$field = v.clone().into();
                }
            )*};
        }
        set!(
            cloud,
            walls,
            dtm,
            ground_kind,
            output,
            strategy,
            thickness,
            ground_band,
            t_dis,
            t_alpha
        );
        set!(
            radius,
            min_pairs,
            denoise_k,
            denoise_sigma,
            seed,
            workers,
            max_iter,
            tol,
            dump_stages
        );
        if self.per_point_growth {
            cfg.growth = GrowthMode::PerPoint;
        }
        if self.skip_vertical {
            cfg.skip_vertical = true;
        }
        if self.no_pseudo_plane {
            cfg.pseudo_plane = false;
        }
        if self.no_metrics {
            cfg.metrics = false;
        }
        Ok(cfg)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Xyz,
    Ply,
}

#[derive(Args)]
struct SynthArgs {
    /// Scene description (TOML); defaults are used when omitted.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "xyz")]
    format: Format,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EvalArgs {
    /// One or more report files.
    #[arg(required = true)]
    reports: Vec<PathBuf>,
    #[arg(long)]
    truth: PathBuf,
    /// Emit CSV even for a single report.
    #[arg(long)]
    csv: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e
                .downcast_ref::<PipelineError>()
                .map(PipelineError::exit_code)
                .unwrap_or(1);
            ExitCode::from(code as u8)
        }
    }
}

fn run(cmd: Command) -> anyhow::Result<()> {
    match cmd {
        Command::Register(args) => cmd_register(&args),
        Command::ExtractPlanes(args) => cmd_extract(&args),
        Command::Synth(args) => cmd_synth(&args),
        Command::Eval(args) => cmd_eval(&args),
    }
}

fn cmd_register(args: &RegisterArgs) -> anyhow::Result<()> {
    let cfg = args.config()?;
    cfg.validate()?;
    let inputs = Inputs::load(&cfg)?;
    let out = register(&inputs, &cfg, &Registry::default())?;
    let path = cfg.output.clone().unwrap_or_else(|| PathBuf::from("report.json"));
    write_report(&path, &out.report).map_err(PipelineError::from)?;
    let t = out.transform;
    println!(
        "q = [{:.9}, {:.9}, {:.9}, {:.9}]",
        t.rotation.q0, t.rotation.q1, t.rotation.q2, t.rotation.q3
    );
    println!(
        "t = [{:.6}, {:.6}, {:.6}]",
        t.translation.x, t.translation.y, t.translation.z
    );
    for w in &out.report.per_wall {
        match &w.skipped {
            None => println!(
                "{}: {} of {} points",
                w.wall_id, w.segment_points, w.neighbor_points
            ),
            Some(why) => println!("{}: skipped ({why})", w.wall_id),
        }
    }
    println!("report written to {}", path.display());
    Ok(())
}

fn cmd_extract(args: &RegisterArgs) -> anyhow::Result<()> {
    let mut cfg = args.config()?;
    if cfg.dump_stages.is_none() {
        cfg.dump_stages = Some(cfg.output.clone().unwrap_or_else(|| PathBuf::from("segments")));
    }
    let inputs = Inputs::load(&cfg)?;
    let (_, walls) = extract_planes(&inputs, &cfg, &Registry::default())?;
    for w in &walls {
        match &w.selection {
            Ok(s) => {
                let n = s.plane.normal;
                println!(
                    "{}: {} of {} points, normal ({:.6}, {:.6}, {:.6}), offset {:.6}",
                    w.wall_id,
                    s.indices.len(),
                    w.neighbors,
                    n.x,
                    n.y,
                    n.z,
                    s.plane.offset
                );
            }
            Err(e) => println!("{}: skipped ({e})", w.wall_id),
        }
    }
    Ok(())
}

fn cmd_synth(args: &SynthArgs) -> anyhow::Result<()> {
    let mut spec = match &args.spec {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            SceneSpec::from_toml(&text).map_err(|e| PipelineError::Config(e.to_string()))?
        }
        None => SceneSpec::default(),
    };
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    let bundle = generate(&spec)?;
    let format = match args.format {
        Format::Xyz => CloudFormat::Ascii,
        Format::Ply => CloudFormat::Ply,
    };
    write_bundle(&bundle, &args.out, format)?;
    println!("{} points written to {}", bundle.cloud.len(), args.out.display());
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> anyhow::Result<()> {
    let truth = read_truth(&args.truth).map_err(PipelineError::from)?;
    let rows: Vec<(PathBuf, (f64, f64, f64))> = args
        .reports
        .iter()
        .map(|p| {
            let r = read_report(p).map_err(PipelineError::from)?;
            Ok((p.clone(), oracle_metrics(&truth, &r.transform())))
        })
        .collect::<Result<_, PipelineError>>()?;
    let mut out = std::io::stdout().lock();
    if args.csv || rows.len() > 1 {
        writeln!(out, "report,rotation_deg,horizontal_m,vertical_m")?;
        for (p, (r, h, v)) in &rows {
            writeln!(out, "{},{r:e},{h:e},{v:e}", csv_field(p))?;
        }
    } else {
        let (r, h, v) = rows[0].1;
        writeln!(out, "rotation error:   {r:.9} deg")?;
        writeln!(out, "horizontal error: {h:.9} m")?;
        writeln!(out, "vertical error:   {v:.9} m")?;
    }
    Ok(())
}

fn csv_field(p: &Path) -> String {
    let s = p.display().to_string();
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s
    }
}
