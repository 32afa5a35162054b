use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use serde_json::json;

use topokd::diagmetrics::{bound_check, jitter_diagram, nearest_maps_are_bijections, random_diagram, BoundSummary};
use topokd::harness::{evaluate, run_ablation, PreparedScene, Reporter, RunConfig, RunReport, Session};
use topokd::net;
use topokd::pointcloud::{generate_scene, io};
use topokd::tda::{default_threshold, persistence, PersistenceDiagram};
use topokd::Error;

#[derive(Parser)]
#[command(name = "topokd", version, about = "Topology-aware knowledge distillation for point-cloud segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Run configuration (TOML). Defaults to the built-in desk benchmark.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the run seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

impl RunArgs {
    fn load(&self) -> anyhow::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::desk_default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        cfg.out_dir = Some(self.out.clone());
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the benchmark scenes and write them as binary clouds.
    Gen(RunArgs),
    /// Train the teacher on cross-entropy and save `teacher.ckpt`.
    TrainTeacher(RunArgs),
    /// Train a student against a saved teacher and save `student.ckpt`.
    Distill {
        #[command(flatten)]
        run: RunArgs,
        /// Teacher checkpoint; defaults to `<out>/teacher.ckpt`.
        #[arg(long)]
        teacher: Option<PathBuf>,
    },
    /// Train a teacher and run the component ablation grid.
    Ablate(RunArgs),
    /// Evaluate a checkpoint on labelled clouds.
    Eval {
        checkpoint: PathBuf,
        /// A cloud file, a directory of clouds, or a `scenes.txt` list.
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Persistence diagram of a cloud file.
    Tda {
        input: PathBuf,
        #[arg(long, default_value_t = 1)]
        maxdim: usize,
        /// Rips threshold; defaults to 1.05 × diameter.
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check W2 ≤ √Chamfer on random diagram pairs or on two diagram files.
    BoundCheck {
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 8)]
        max_points: usize,
        #[arg(long, num_args = 2, value_names = ["A", "B"])]
        diagrams: Option<Vec<PathBuf>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print a run summary.
    Report { dir: PathBuf },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            match e.downcast_ref::<Error>() {
                Some(Error::Config(_)) => ExitCode::from(2),
                Some(Error::Divergence(_)) => ExitCode::from(3),
                _ => ExitCode::from(1),
            }
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Gen(args) => gen(&args.load()?, &args.out),
        Command::TrainTeacher(args) => train_teacher(&args.load()?, &args.out),
        Command::Distill { run, teacher } => {
            let teacher = teacher.unwrap_or_else(|| run.out.join("teacher.ckpt"));
            distill(&run.load()?, &run.out, &teacher)
        }
        Command::Ablate(args) => {
            let cfg = args.load()?;
            let mut reporter = Reporter::create(&args.out)?;
            let report = run_ablation(cfg, &mut reporter)?;
            print!("{}", report.render());
            Ok(())
        }
        Command::Eval { checkpoint, scenes, out } => eval(&checkpoint, &scenes, out.as_deref()),
        Command::Tda { input, maxdim, threshold, out } => tda(&input, maxdim, threshold, out.as_deref()),
        Command::BoundCheck { trials, seed, max_points, diagrams, out } => match diagrams {
            Some(files) => bound_files(&files[0], &files[1]),
            None => bound_random(trials, seed, max_points, out.as_deref()),
        },
        Command::Report { dir } => {
            print!("{}", RunReport::read(&dir)?.render());
            Ok(())
        }
    }
}

fn gen(cfg: &RunConfig, out: &Path) -> anyhow::Result<()> {
    let dir = out.join("scenes");
    std::fs::create_dir_all(&dir)?;
    let mut list = String::new();
    for (split, specs) in [("train", cfg.benchmark.train_specs()), ("eval", cfg.benchmark.eval_specs())] {
        for (i, spec) in specs.iter().enumerate() {
            let scene = generate_scene(spec)?;
            let name = format!("{split}_{i:03}.tkpc");
            io::write_file(&scene.cloud, &dir.join(&name))?;
            list += &format!("{split} scenes/{name}\n");
        }
    }
    std::fs::write(out.join("scenes.txt"), list)?;
    println!("wrote {} train and {} eval scenes to {}", cfg.benchmark.train_scenes, cfg.benchmark.eval_scenes, dir.display());
    Ok(())
}

fn train_teacher(cfg: &RunConfig, out: &Path) -> anyhow::Result<()> {
    let mut reporter = Reporter::create(out)?;
    reporter.record("config", json!({ "config": cfg }))?;
    let session = Session::new(cfg.clone())?;
    let started = std::time::Instant::now();
    let result = session.train_teacher()?;
    for (step, loss) in result.losses.iter().enumerate() {
        reporter.record("teacher-step", json!({ "step": step, "seg": loss }))?;
    }
    net::save(&result.network, &out.join("teacher.ckpt"))?;
    let mut report = RunReport::new(cfg.clone());
    report.timings.insert("teacher".into(), started.elapsed().as_secs_f64());
    let summary = session.summarize("teacher", &result.network, result.train_miou, result.losses.last().copied())?;
    reporter.record("model", json!({ "model": &summary }))?;
    report.models.push(summary);
    reporter.flush()?;
    report.write(out)?;
    print!("{}", report.render());
    Ok(())
}

fn distill(cfg: &RunConfig, out: &Path, teacher_path: &Path) -> anyhow::Result<()> {
    let teacher = net::load(teacher_path)
        .with_context(|| format!("loading teacher checkpoint {}", teacher_path.display()))?;
    if teacher.config().num_classes != cfg.benchmark.num_classes {
        return Err(Error::Config(format!(
            "teacher predicts {} classes, benchmark has {}",
            teacher.config().num_classes,
            cfg.benchmark.num_classes
        ))
        .into());
    }
    let mut reporter = Reporter::create(out)?;
    reporter.record("config", json!({ "config": cfg }))?;
    let session = Session::new(cfg.clone())?;
    let started = std::time::Instant::now();
    let result = session.distill(&teacher)?;
    reporter.steps("student", &result.history)?;
    net::save(&result.network, &out.join("student.ckpt"))?;
    let mut report = RunReport::new(cfg.clone());
    report.timings.insert("distill".into(), started.elapsed().as_secs_f64());
    let final_loss = result.history.last().map(|b| b.total);
    report.models.push(session.summarize("student", &result.network, result.train_miou, final_loss)?);
    reporter.flush()?;
    report.write(out)?;
    print!("{}", report.render());
    Ok(())
}

fn scene_files(path: &Path) -> anyhow::Result<Vec<PathBuf>> {
    if path.is_dir() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(path)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        files.sort();
        return Ok(files);
    }
    if path.extension().is_some_and(|e| e == "txt") && path.file_name().is_some_and(|n| n == "scenes.txt") {
        let base = path.parent().unwrap_or(Path::new("."));
        let text = std::fs::read_to_string(path)?;
        return Ok(text
            .lines()
            .filter_map(|l| l.split_whitespace().nth(1))
            .map(|rel| base.join(rel))
            .collect());
    }
    Ok(vec![path.to_path_buf()])
}

fn eval(checkpoint: &Path, scenes: &Path, out: Option<&Path>) -> anyhow::Result<()> {
    let net = net::load(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    let files = scene_files(scenes)?;
    if files.is_empty() {
        bail!("no clouds found at {}", scenes.display());
    }
    let prepared = files
        .iter()
        .map(|f| {
            let cloud = io::read_file(f).with_context(|| format!("reading {}", f.display()))?;
            Ok(PreparedScene::new(cloud, &[net.config().neighbors])?)
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let report = evaluate(&net, &prepared)?;
    for (f, m) in files.iter().zip(&report.per_scene) {
        println!("{:<40} mIoU {m:.4}", f.display());
    }
    println!("pooled mIoU {:.4}", report.miou);
    for (k, c) in report.per_class.iter().enumerate() {
        let iou = c.iou().map_or("absent".to_string(), |v| format!("{v:.4}"));
        println!("  class {k}: IoU {iou} ({} / {})", c.intersection, c.union);
    }
    if let Some(out) = out {
        std::fs::write(out, serde_json::to_string_pretty(&report)?)?;
    }
    Ok(())
}

fn tda(input: &Path, maxdim: usize, threshold: Option<f64>, out: Option<&Path>) -> anyhow::Result<()> {
    let cloud = io::read_file(input)?;
    let pts = ndarray::Array2::from_shape_fn((cloud.len(), 3), |(i, j)| cloud.coords()[i][j]);
    let threshold = threshold.unwrap_or_else(|| default_threshold(pts.view()));
    let diagram = persistence(pts.view(), maxdim, threshold)?;
    match out {
        Some(p) => std::fs::write(p, diagram.to_text())?,
        None => print!("{}", diagram.to_text()),
    }
    for d in 0..=maxdim {
        eprintln!("H{d}: {} bars, {} essential", diagram.dimension(d).count(), diagram.essential_count(d));
    }
    Ok(())
}

fn bound_files(a: &Path, b: &Path) -> anyhow::Result<()> {
    let d1 = PersistenceDiagram::from_text(&std::fs::read_to_string(a)?)?;
    let d2 = PersistenceDiagram::from_text(&std::fs::read_to_string(b)?)?;
    let r = bound_check(&d1, &d2)?;
    println!("chamfer {:.6}  w2 {:.6}  sqrt(chamfer) - w2 {:+.6}  {}", r.chamfer, r.w2, r.gap, if r.satisfied { "ok" } else { "VIOLATED" });
    Ok(())
}

fn bound_random(trials: usize, seed: u64, max_points: usize, out: Option<&Path>) -> anyhow::Result<()> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let (mut bijective, mut all) = (BoundSummary::default(), BoundSummary::default());
    for _ in 0..trials {
        let n1 = rng.random_range(1..=max_points);
        let d1 = random_diagram(&mut rng, n1, 2);
        let d2 = if rng.random_bool(0.5) {
            jitter_diagram(&mut rng, &d1, 0.05)
        } else {
            let n2 = rng.random_range(0..=max_points);
            random_diagram(&mut rng, n2, 2)
        };
        let r = bound_check(&d1, &d2)?;
        all.record(&d1, &d2, &r);
        if nearest_maps_are_bijections(&d1, &d2) {
            bijective.record(&d1, &d2, &r);
        }
    }
    println!("bijective nearest-neighbour pairs: {}/{} passed", bijective.passed, bijective.checked);
    println!("all pairs: {}/{} passed ({:.2}%)", all.passed, all.checked, 100.0 * all.pass_rate());
    if let Some(out) = out {
        std::fs::write(out, serde_json::to_string_pretty(&json!({ "bijective": bijective, "all": all }))?)?;
    }
    Ok(())
}
