//! Command-line front end. [`run_cli`] returns the process exit code.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::analysis::{
    attention_maps_at, attention_trajectory, clip_frechet, decomposition_grid, eval_latents, generate_clips,
    motion_style_cosine, real_clips, DEFAULT_EMBED_SEED,
};
use crate::bench;
use crate::checkpoint::{self, read_archive};
use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::gradsuite::{self, Scope, SUITE_TOL};
use crate::hypernet::LayerShape;
use crate::imageio::{create_dir, write_clip, write_grid, write_pgm};
use crate::networks::Generator;
use crate::scalar::{DType, Scalar};
use crate::synthetic::{make_dataset, write_manifest, DatasetKind, CLIP_LENGTH};
use crate::training::{load_scenes, MetricsRow, TrainState};

#[derive(Debug, Parser)]
#[command(name = "mostgan", version, about = "Toy video GAN with motion styles and attention-modulated filters")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train from a key=value config, writing metrics.csv and checkpoints.
    Train(TrainArgs),
    /// Write a generated clip as a PPM sequence.
    Sample(SampleArgs),
    /// Diagnostics on a trained checkpoint.
    Analyze(AnalyzeArgs),
    /// Hypernetwork head parameter counts and timing.
    Bench(BenchArgs),
    /// Finite-difference gradient suite.
    Gradcheck(GradcheckArgs),
    /// Synthetic dataset utilities.
    Dataset {
        #[command(subcommand)]
        action: DatasetCommand,
    },
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, required_unless_present = "resume")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from a checkpoint; its config is used and new rows are appended.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub frames: usize,
    /// Frames per time unit: frame i is rendered at t = i / fps.
    #[arg(long, default_value_t = 1.0)]
    pub fps: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum What {
    Cosine,
    Trajectory,
    Attmap,
    Grid,
    Frechet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Reference {
    /// Generated clips against the dataset.
    Generated,
    /// The dataset against itself.
    Dataset,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long, value_enum)]
    pub what: What,
    #[arg(long)]
    pub out: PathBuf,
    /// Layer index; defaults to the first layer of the top block.
    #[arg(long)]
    pub layer: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Time for cosine and attmap.
    #[arg(long, default_value_t = 0.0)]
    pub t: f64,
    /// Times as `a..b` (inclusive, step 1) or a comma list.
    #[arg(long, default_value = "0..63")]
    pub times: String,
    /// Grid rows (motion tracks) and columns (contents).
    #[arg(long, default_value_t = 2)]
    pub rows: usize,
    #[arg(long, default_value_t = 2)]
    pub cols: usize,
    /// Clip count per side for frechet.
    #[arg(long, default_value_t = 256)]
    pub count: usize,
    #[arg(long, default_value_t = 8)]
    pub n_frames: usize,
    #[arg(long, default_value_t = DEFAULT_EMBED_SEED)]
    pub embed_seed: u64,
    /// Scene manifest for frechet; defaults to the training dataset.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Reference::Generated)]
    pub reference: Reference,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// `c_out,c_in,kh,kw`.
    #[arg(long, default_value = "512,512,3,3")]
    pub layer: String,
    #[arg(long, default_value_t = 128)]
    pub dh: usize,
    #[arg(long, default_value_t = 1)]
    pub rank: usize,
    #[arg(long, default_value_t = 8)]
    pub k: usize,
    #[arg(long, default_value_t = 10)]
    pub reps: usize,
    #[arg(long, default_value = "f32")]
    pub dtype: String,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value = "ops")]
    pub scope: String,
    /// Motion styles for the full scope.
    #[arg(long, default_value_t = 4)]
    pub k: usize,
    /// Negate the backward rule of one op (negative control).
    #[arg(long, hide = true)]
    pub inject_fault: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum DatasetCommand {
    /// Render scenes as PPM sequences plus a manifest.
    Dump(DumpArgs),
}

#[derive(Debug, Args)]
pub struct DumpArgs {
    #[arg(long, default_value = "two-motion")]
    pub kind: String,
    #[arg(long, default_value_t = 4)]
    pub count: usize,
    #[arg(long, default_value_t = 32)]
    pub resolution: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = CLIP_LENGTH)]
    pub frames: usize,
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run_cli<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Train(a) => cmd_train(a.config.as_deref(), &a.out, a.resume.as_deref()).map(|_| 0),
        Command::Sample(a) => cmd_sample(&a).map(|_| 0),
        Command::Analyze(a) => cmd_analyze(&a).map(|_| 0),
        Command::Bench(a) => cmd_bench(&a).map(|_| 0),
        Command::Gradcheck(a) => cmd_gradcheck(&a),
        Command::Dataset {
            action: DatasetCommand::Dump(a),
        } => cmd_dataset_dump(&a).map(|_| 0),
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn not_a_model_dtype() -> Error {
    Error::Config("u8 is not a model precision".into())
}

/// Runs training to `cfg.steps`, writing `metrics.csv`, `ckpt_%08d.msgv` and `ckpt_final.msgv`.
pub fn cmd_train(config: Option<&Path>, out: &Path, resume: Option<&Path>) -> Result<()> {
    create_dir(out)?;
    match (resume, config) {
        (Some(ckpt), _) => match read_archive(ckpt)?.config()?.dtype {
            DType::F32 => train_loop(checkpoint::load::<f32>(ckpt)?, out),
            DType::F64 => train_loop(checkpoint::load::<f64>(ckpt)?, out),
            DType::U8 => Err(not_a_model_dtype()),
        },
        (None, None) => Err(Error::Config("train needs --config or --resume".into())),
        (None, Some(config)) => {
            let cfg = TrainConfig::from_text(&read_text(config)?)?;
            match cfg.dtype {
                DType::F32 => train_loop(TrainState::<f32>::new(cfg)?, out),
                DType::F64 => train_loop(TrainState::<f64>::new(cfg)?, out),
                DType::U8 => Err(not_a_model_dtype()),
            }
        }
    }
}

fn train_loop<T: Scalar>(mut state: TrainState<T>, out: &Path) -> Result<()> {
    let path = out.join("metrics.csv");
    let fresh = state.step == 0 || !path.exists();
    let file = if fresh {
        File::create(&path)
    } else {
        OpenOptions::new().append(true).open(&path)
    }
    .map_err(|e| Error::io(&path, e))?;
    let mut csv = BufWriter::new(file);
    let io = |e| Error::io(&path, e);
    if fresh {
        writeln!(csv, "{}", MetricsRow::HEADER).map_err(io)?;
    }
    while state.step < state.cfg.steps {
        let row = state.train_step().map_err(|e| match e {
            Error::NonFinite { op } => Error::NonFinite {
                op: format!("{op} at step {}", state.step + 1),
            },
            other => other,
        })?;
        writeln!(csv, "{row}").map_err(io)?;
        let every = state.cfg.checkpoint_every;
        if every > 0 && state.step.is_multiple_of(every) {
            csv.flush().map_err(io)?;
            let p = out.join(format!("ckpt_{:08}.msgv", state.step));
            checkpoint::save(&state, &p)?;
            log::info!("step {} saved {}", state.step, p.display());
        }
    }
    csv.flush().map_err(io)?;
    checkpoint::save(&state, out.join("ckpt_final.msgv"))
}

/// Loads a checkpoint in its stored precision and hands it to `$body` as `$state`.
macro_rules! with_state {
    ($path:expr, |$state:ident| $body:expr) => {
        match read_archive($path)?.config()?.dtype {
            DType::F32 => {
                let $state = checkpoint::load::<f32>($path)?;
                $body
            }
            DType::F64 => {
                let $state = checkpoint::load::<f64>($path)?;
                $body
            }
            DType::U8 => Err(not_a_model_dtype()),
        }
    };
}

pub fn cmd_sample(a: &SampleArgs) -> Result<()> {
    if a.frames == 0 || !(a.fps > 0.0) {
        return Err(Error::Config("--frames and --fps must be positive".into()));
    }
    with_state!(&a.ckpt, |st| sample_typed(&st, a))
}

fn sample_typed<T: Scalar>(st: &TrainState<T>, a: &SampleArgs) -> Result<()> {
    let times: Vec<f64> = (0..a.frames).map(|i| i as f64 / a.fps).collect();
    let (z, track) = eval_latents::<T>(&st.generator, a.seed, 0, *times.last().unwrap_or(&0.0))?;
    let clip = st.generator.sample(&st.store, &z, &track, &times)?;
    let paths = write_clip(&clip, &a.out)?;
    println!("wrote {} frames to {}", paths.len(), a.out.display());
    Ok(())
}

/// Parses `a..b` (inclusive) or `t0,t1,...`.
pub fn parse_times(s: &str) -> Result<Vec<f64>> {
    let bad = || Error::Config(format!("invalid --times `{s}`"));
    let times: Vec<f64> = if let Some((a, b)) = s.split_once("..") {
        let a: i64 = a.trim().parse().map_err(|_| bad())?;
        let b: i64 = b.trim().parse().map_err(|_| bad())?;
        (a..=b).map(|t| t as f64).collect()
    } else {
        s.split(',').map(|x| x.trim().parse().map_err(|_| bad())).collect::<Result<_>>()?
    };
    if times.is_empty() || times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(bad());
    }
    Ok(times)
}

fn top_layer(gen: &Generator) -> usize {
    gen.block_first_layer(gen.cfg.channels.len() - 1)
}

fn csv_rows(rows: &[Vec<f64>]) -> String {
    rows.iter()
        .map(|r| r.iter().map(|v| format!("{v:.17e}")).collect::<Vec<_>>().join(",") + "\n")
        .collect()
}

pub fn cmd_analyze(a: &AnalyzeArgs) -> Result<()> {
    create_dir(&a.out)?;
    with_state!(&a.ckpt, |st| analyze_typed(&st, a))
}

fn analyze_typed<T: Scalar>(st: &TrainState<T>, a: &AnalyzeArgs) -> Result<()> {
    let gen = &st.generator;
    let layer = a.layer.unwrap_or_else(|| top_layer(gen));
    match a.what {
        What::Cosine => {
            let (z, track) = eval_latents::<T>(gen, a.seed, 0, a.t)?;
            let m = motion_style_cosine(gen, &st.store, &z, &track, a.t, layer)?;
            let path = a.out.join("cosine.csv");
            write_text(&path, &csv_rows(&m))?;
            println!("wrote {}", path.display());
        }
        What::Trajectory => {
            let times = parse_times(&a.times)?;
            let (z, track) = eval_latents::<T>(gen, a.seed, 0, *times.last().unwrap())?;
            let traj = attention_trajectory(gen, &st.store, &z, &track, &times, layer)?;
            let k = gen.cfg.style.k;
            let header = (0..k).map(|j| format!("style_{j}")).collect::<Vec<_>>().join(",");
            let path = a.out.join("trajectory.csv");
            write_text(&path, &format!("{header}\n{}", csv_rows(&traj)))?;
            println!("wrote {}", path.display());
        }
        What::Attmap => {
            let (z, track) = eval_latents::<T>(gen, a.seed, 0, a.t)?;
            let maps = attention_maps_at(gen, &st.store, &z, &track, a.t, layer)?;
            let (k, h, w) = (maps.shape()[0], maps.shape()[1], maps.shape()[2]);
            for j in 0..k {
                let m = maps.slice_axis(0, j, 1)?.reshape(&[h, w])?;
                write_pgm(&m, &a.out.join(format!("attmap_style_{j}.pgm")))?;
            }
            println!("wrote {k} maps to {}", a.out.display());
        }
        What::Grid => {
            let times = parse_times(&a.times)?;
            let t_max = *times.last().unwrap();
            let contents = (0..a.cols)
                .map(|j| eval_latents::<T>(gen, a.seed, j as u64, t_max).map(|(z, _)| z))
                .collect::<Result<Vec<_>>>()?;
            let tracks = (0..a.rows)
                .map(|i| eval_latents::<T>(gen, a.seed.wrapping_add(1), i as u64, t_max).map(|(_, t)| t))
                .collect::<Result<Vec<_>>>()?;
            let grid = decomposition_grid(gen, &st.store, &contents, &tracks, &times)?;
            let paths = write_grid(&grid, &a.out)?;
            println!("wrote {} tiled frames to {}", paths.len(), a.out.display());
        }
        What::Frechet => {
            let scenes = match &a.dataset {
                Some(p) => crate::synthetic::parse_manifest(&read_text(p)?)?,
                None => load_scenes(&st.cfg)?,
            };
            let real = real_clips::<T>(&scenes, a.count, a.n_frames)?;
            let fd = match a.reference {
                Reference::Dataset => clip_frechet(&real, &real, a.n_frames, a.embed_seed)?,
                Reference::Generated => {
                    let fake = generate_clips(gen, &st.store, a.count, a.n_frames, a.seed)?;
                    clip_frechet(&fake, &real, a.n_frames, a.embed_seed)?
                }
            };
            let path = a.out.join("frechet.csv");
            write_text(
                &path,
                &format!("n_frames,count,embed_seed,frechet\n{},{},{},{fd:.17e}\n", a.n_frames, a.count, a.embed_seed),
            )?;
            println!("frechet {fd:.6}");
        }
    }
    Ok(())
}

pub fn parse_layer(s: &str) -> Result<LayerShape> {
    let v: Vec<usize> = s
        .split(',')
        .map(|x| x.trim().parse())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Config(format!("invalid --layer `{s}` (expected c_out,c_in,kh,kw)")))?;
    match v[..] {
        [c_out, c_in, kh, kw] => Ok(LayerShape::new(c_out, c_in, kh, kw)),
        _ => Err(Error::Config(format!("invalid --layer `{s}` (expected c_out,c_in,kh,kw)"))),
    }
}

pub fn cmd_bench(a: &BenchArgs) -> Result<()> {
    let shape = parse_layer(&a.layer)?;
    let report = match a.dtype.as_str() {
        "f32" => bench::run::<f32>(shape, a.dh, a.rank, a.k, a.reps)?,
        "f64" => bench::run::<f64>(shape, a.dh, a.rank, a.k, a.reps)?,
        d => return Err(Error::Config(format!("invalid dtype `{d}`"))),
    };
    println!("{report}");
    Ok(())
}

pub fn cmd_gradcheck(a: &GradcheckArgs) -> Result<i32> {
    let scope: Scope = a.scope.parse()?;
    let fault: Option<&'static str> = a.inject_fault.clone().map(|s| &*Box::leak(s.into_boxed_str()));
    let report = gradsuite::run(scope, a.k, fault)?;
    print!("{report}");
    if let Some(w) = report.worst() {
        println!("worst: {} ({:.3e})", w.name, w.report.max_rel_error);
    }
    if report.passes(SUITE_TOL) {
        println!("PASS ({} cases, tolerance {SUITE_TOL:e})", report.cases.len());
        Ok(0)
    } else {
        println!("FAIL");
        Ok(3)
    }
}

pub fn cmd_dataset_dump(a: &DumpArgs) -> Result<()> {
    let kind: DatasetKind = a.kind.parse()?;
    if a.frames == 0 {
        return Err(Error::Config("--frames must be positive".into()));
    }
    let scenes = make_dataset(kind, a.count, a.resolution, a.seed)?;
    create_dir(&a.out)?;
    write_text(&a.out.join("manifest.txt"), &write_manifest(&scenes))?;
    let times: Vec<f64> = (0..a.frames).map(|i| i as f64).collect();
    for (i, s) in scenes.iter().enumerate() {
        write_clip(&s.render_clip::<f32>(&times)?, &a.out.join(format!("scene_{i:04}")))?;
    }
    println!("wrote {} scenes to {}", scenes.len(), a.out.display());
    Ok(())
}
