use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use xreg::eval::{run_registration_experiment, EvalReport};
use xreg::io::{
    gen_phantom_pair, load_dataset, normalize_intensity, read_tensor, write_dataset, write_tensor, Split, SplitCounts,
};
use xreg::nets::{RegistrationModel, Side};
use xreg::train::{fit_with, load_checkpoint, save_checkpoint, LossRegistry, Optimizers, TrainConfig, TrainingLog};
use xreg::warp::mesh;
use xreg::xai::{export_overlay, ExplainRequest, SiteRegistry, TargetKind};
use xreg::{Error, Result};

#[derive(Parser)]
#[command(name = "xreg", version, about = "Unsupervised bi-directional multi-modal registration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic bimodal phantom dataset with a split manifest.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 12)]
        pairs: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Structures per phantom, the enclosing one included.
        #[arg(long, default_value_t = 3)]
        complexity: usize,
        /// Spatial axes, 2 or 3.
        #[arg(long, default_value_t = 2)]
        rank: usize,
        /// Subjects per split as TRAIN,VAL,TEST; defaults to 8:1:3 proportions.
        #[arg(long, value_parser = parse_split)]
        split: Option<SplitCounts>,
    },
    /// Train on a dataset; writes a loss log and checkpoints.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// JSON training config; missing fields take defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also checkpoint every N steps under OUT/checkpoints.
        #[arg(long)]
        checkpoint_every: Option<usize>,
    },
    /// Register a moving (modality A) image to a fixed (modality B) image.
    Register {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        moving: PathBuf,
        #[arg(long)]
        fixed: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write Grad-CAM maps for one attention site.
    Explain {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        moving: PathBuf,
        #[arg(long)]
        fixed: PathBuf,
        #[arg(long, value_enum)]
        site: SiteArg,
        /// Defaults to `magnitude` for field sites and `score` for `disc`.
        #[arg(long, value_enum)]
        target: Option<TargetArg>,
        /// Critic side for `--site disc`.
        #[arg(long, value_enum, default_value_t = SideArg::B)]
        side: SideArg,
        /// Seeds the critic input perturbations.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Repeated-perturbation registration experiment on the test split.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 20)]
        repeats: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Perturbation magnitude range as LO,HI.
        #[arg(long, value_parser = parse_range, default_value = "0.2,0.5")]
        magnitude: [f64; 2],
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SiteArg {
    Encoder,
    Stn,
    Disc,
}

#[derive(Clone, Copy, ValueEnum)]
enum TargetArg {
    Magnitude,
    Affine,
    Dense,
    Score,
}

#[derive(Clone, Copy, ValueEnum)]
enum SideArg {
    A,
    B,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

fn parse_split(s: &str) -> std::result::Result<SplitCounts, String> {
    let v: Vec<usize> = s
        .split(',')
        .map(|x| x.trim().parse::<usize>().map_err(|e| format!("{x:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    match v[..] {
        [train, val, test] => Ok(SplitCounts { train, val, test }),
        _ => Err("expected TRAIN,VAL,TEST".into()),
    }
}

fn parse_range(s: &str) -> std::result::Result<[f64; 2], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|e| format!("{x:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    match v[..] {
        [lo, hi] if 0.0 <= lo && lo <= hi => Ok([lo, hi]),
        _ => Err("expected LO,HI with 0 <= LO <= HI".into()),
    }
}

fn create_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn gen_data(
    out: &Path,
    pairs: usize,
    size: usize,
    seed: u64,
    complexity: usize,
    rank: usize,
    split: Option<SplitCounts>,
) -> Result<()> {
    if pairs == 0 {
        return Err(Error::InvalidArgument("--pairs must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phantoms = (0..pairs)
        .map(|_| gen_phantom_pair(&mut rng, size, rank, complexity))
        .collect::<Result<Vec<_>>>()?;
    create_dir(out)?;
    let counts = split.unwrap_or_else(|| SplitCounts::proportional(pairs));
    let m = write_dataset(out, &phantoms, counts, seed)?;
    println!(
        "wrote {} pairs to {} (train {}, val {}, test {})",
        m.pairs.len(),
        out.display(),
        m.counts.train,
        m.counts.val,
        m.counts.test
    );
    Ok(())
}

fn read_config(path: Option<&Path>) -> Result<TrainConfig> {
    let Some(path) = path else {
        return Ok(TrainConfig::default());
    };
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let config: TrainConfig = serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    config.validate().map_err(|e| Error::Format {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    Ok(config)
}

fn train(data: &Path, config: Option<&Path>, out: &Path, every: Option<usize>) -> Result<()> {
    let config = read_config(config)?;
    let ds = load_dataset(data)?;
    let pairs = ds.training_pairs();
    let first = pairs
        .first()
        .ok_or_else(|| Error::Dataset(format!("{}: no training pairs", data.display())))?;
    let dims = first.a.shape()[2..].to_vec();
    if dims.iter().any(|&n| n != config.image_size) {
        return Err(Error::InvalidArgument(format!(
            "config image_size {} does not match dataset images {dims:?}",
            config.image_size
        )));
    }
    create_dir(out)?;
    let mut model = RegistrationModel::new(dims.len(), config.init_seed)?;
    let mut opts = Optimizers::new(&config);
    let ckpt_root = out.join("checkpoints");
    let log = fit_with(&mut model, &mut opts, &pairs, &config, &LossRegistry::default(), |entry, model, opts| {
        if every.is_some_and(|n| n > 0 && entry.step % n == 0) {
            save_checkpoint(ckpt_root.join(format!("step_{:06}", entry.step)), model, opts, entry.step, &config)?;
        }
        Ok(())
    })?;
    write_text(&out.join("losses.csv"), &log.to_csv())?;
    save_checkpoint(out.join("checkpoint"), &model, &opts, config.steps, &config)?;
    report_training(&log, out);
    Ok(())
}

fn report_training(log: &TrainingLog, out: &Path) {
    if let Some(last) = log.entries.last() {
        let terms: Vec<String> = last.losses.iter().map(|(k, v)| format!("{k}={v:.4}")).collect();
        println!("step {}: {}", last.step, terms.join(" "));
    }
    println!("wrote {}", out.join("checkpoint").display());
}

/// Raw image for output plus its normalized network input.
fn read_image(path: &Path) -> Result<(xreg::autograd::Tensor, xreg::autograd::Tensor)> {
    let raw = read_tensor(path)?;
    let raw = match raw.rank() {
        2 | 3 => {
            let mut shape = vec![1, 1];
            shape.extend_from_slice(raw.shape());
            raw.reshape(&shape)?
        }
        _ => raw,
    };
    let s = raw.shape();
    if s.len() < 4 || s[0] != 1 || s[1] != 1 {
        return Err(Error::format(path, format!("expected a [spatial] or [1,1,spatial] image, got {s:?}")));
    }
    let norm = normalize_intensity(&raw);
    Ok((raw, norm))
}

fn register(ckpt: &Path, moving: &Path, fixed: &Path, out: &Path) -> Result<()> {
    let model = load_checkpoint(ckpt)?.model;
    let (raw_a, a) = read_image(moving)?;
    let (_, b) = read_image(fixed)?;
    let o = model.forward_pass(&a, &b)?;
    create_dir(out)?;
    let phi = &o.phi_ab;
    // the predicted warp resamples the moving image in its own intensity units
    write_tensor(&xreg::warp::apply_warp(&raw_a, phi)?, out.join("warped.npy"))?;
    write_tensor(&phi.theta(), out.join("affine.npy"))?;
    write_tensor(phi.dense.grid(), out.join("dense.npy"))?;
    let total = phi.total_map()?;
    let id = mesh(1, phi.dims());
    let disp = xreg::autograd::Tensor::new(
        total.shape().to_vec(),
        total.data().iter().zip(id.data()).map(|(t, i)| t - i).collect(),
    )?;
    write_tensor(&disp, out.join("displacement.npy"))?;
    println!("wrote warped.npy, affine.npy, dense.npy, displacement.npy to {}", out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn explain(
    ckpt: &Path,
    moving: &Path,
    fixed: &Path,
    site: SiteArg,
    target: Option<TargetArg>,
    side: SideArg,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let model = load_checkpoint(ckpt)?.model;
    let (_, a) = read_image(moving)?;
    let (_, b) = read_image(fixed)?;
    let site_name = match site {
        SiteArg::Encoder => "encoder",
        SiteArg::Stn => "stn",
        SiteArg::Disc => "disc",
    };
    let target = match (target, site) {
        (Some(TargetArg::Magnitude), _) => TargetKind::FieldMagnitude,
        (Some(TargetArg::Affine), _) => TargetKind::FieldAffinePart,
        (Some(TargetArg::Dense), _) => TargetKind::FieldDensePart,
        (Some(TargetArg::Score), _) | (None, SiteArg::Disc) => TargetKind::DiscScore,
        (None, _) => TargetKind::FieldMagnitude,
    };
    let registry = SiteRegistry::default();
    let req = ExplainRequest {
        model: &model,
        moving: &a,
        fixed: &b,
        target,
        side: match side {
            SideArg::A => Side::A,
            SideArg::B => Side::B,
        },
        seed,
        magnitude: [0.2, 0.5],
    };
    let maps = registry.get(site_name)?.explain(&req)?;
    create_dir(out)?;
    for m in &maps {
        for path in export_overlay(&m.map, &m.underlay, out.join(&m.name))? {
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn eval(ckpt: &Path, data: &Path, repeats: usize, seed: u64, magnitude: [f64; 2], split: SplitArg, out: &Path) -> Result<()> {
    let model = load_checkpoint(ckpt)?.model;
    let ds = load_dataset(data)?;
    let split = match split {
        SplitArg::Train => Split::Train,
        SplitArg::Val => Split::Val,
        SplitArg::Test => Split::Test,
    };
    let pairs = ds.eval_pairs(split);
    if pairs.is_empty() {
        return Err(Error::Dataset(format!("{}: no pairs in the {split:?} split", data.display())));
    }
    let reports = pairs
        .iter()
        .enumerate()
        .map(|(i, p)| run_registration_experiment(&model, p, repeats, magnitude, seed.wrapping_add(i as u64)))
        .collect::<Result<Vec<_>>>()?;
    let report = EvalReport::merge(reports)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_text(out, &report.to_json())?;
    for (name, d) in &report.structures {
        println!("{name}: dice {:.3} -> {:.3}", d.dice_before, d.dice_after);
    }
    println!(
        "consistency mean {:.3} max {:.3} voxels, folding {:.4}",
        report.consistency.mean, report.consistency.max, report.folding
    );
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData {
            out,
            pairs,
            size,
            seed,
            complexity,
            rank,
            split,
        } => gen_data(&out, pairs, size, seed, complexity, rank, split),
        Command::Train {
            data,
            config,
            out,
            checkpoint_every,
        } => train(&data, config.as_deref(), &out, checkpoint_every),
        Command::Register {
            ckpt,
            moving,
            fixed,
            out,
        } => register(&ckpt, &moving, &fixed, &out),
        Command::Explain {
            ckpt,
            moving,
            fixed,
            site,
            target,
            side,
            seed,
            out,
        } => explain(&ckpt, &moving, &fixed, site, target, side, seed, &out),
        Command::Eval {
            ckpt,
            data,
            repeats,
            seed,
            magnitude,
            split,
            out,
        } => eval(&ckpt, &data, repeats, seed, magnitude, split, &out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
