use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use dpcc::codec::{
    decode_sequence, encode_sequence, moving_average, read_sequence, training_pairs, write_sequence, CodecConfig,
    FrameType, Model, Trainer,
};
use dpcc::metrics::{bd_rate, d1_psnr, points_to_coords, rd_curves, read_ply, voxelize, write_ply_coords, PlyFormat, RdRow};
use dpcc::sparse::Coords;

#[derive(Parser)]
#[command(name = "dpcc", version, about = "Learned inter-frame coding of dynamic point cloud geometry")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Ascii,
    Binary,
}

impl From<Format> for PlyFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Ascii => PlyFormat::Ascii,
            Format::Binary => PlyFormat::BinaryLittleEndian,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// Full-size network for depth-10 frames.
    Default,
    /// Small network for depth-6 synthetic data.
    Toy,
}

#[derive(Subcommand)]
enum Command {
    /// Quantize a PLY point cloud onto a 2^depth grid.
    Voxelize {
        input: PathBuf,
        output: PathBuf,
        #[arg(long)]
        depth: u32,
        #[arg(long, value_enum, default_value = "binary")]
        format: Format,
    },
    /// Train a model on consecutive frame pairs.
    Train {
        /// Directory of voxelized PLY frames forming one sequence; repeat for more sequences.
        #[arg(long, required = true)]
        frames: Vec<PathBuf>,
        #[arg(long)]
        ckpt: PathBuf,
        /// TOML file with model and training settings.
        #[arg(long, conflicts_with = "preset")]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        preset: Option<Preset>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// kd-tree block count for the training pairs. Repeat to mix block
        /// counts with equal weight.
        #[arg(long, default_value = "1")]
        blocks: Vec<usize>,
        /// Print the loss every this many steps.
        #[arg(long, default_value_t = 100)]
        log_every: usize,
    },
    /// Code a directory of frames into one bitstream.
    Encode {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        frames: PathBuf,
        /// Frames per group of pictures; defaults to the model's setting.
        #[arg(long)]
        gop: Option<usize>,
        output: PathBuf,
    },
    /// Decode a bitstream into numbered PLY frames.
    Decode {
        #[arg(long)]
        ckpt: PathBuf,
        input: PathBuf,
        outdir: PathBuf,
        #[arg(long, value_enum, default_value = "binary")]
        format: Format,
    },
    /// Score decoded frames against the originals and write a rate-distortion CSV.
    Eval {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        dec: PathBuf,
        #[arg(long)]
        bits: PathBuf,
        #[arg(long)]
        csv: PathBuf,
        /// Sequence name; defaults to the reference directory name.
        #[arg(long)]
        sequence: Option<String>,
        /// Operating point label; defaults to the bitstream file stem.
        #[arg(long)]
        point: Option<String>,
        /// Add rows to an existing CSV instead of replacing it.
        #[arg(long)]
        append: bool,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// BD-rate of a test codec against an anchor, per sequence.
    Bdrate {
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        anchor: PathBuf,
    },
}

fn ply_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    files.retain(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("ply")));
    files.sort();
    ensure!(!files.is_empty(), "no .ply files in {}", dir.display());
    Ok(files)
}

fn read_points(path: &Path) -> Result<Vec<[f64; 3]>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_ply(BufReader::new(file)).with_context(|| format!("parsing {}", path.display()))
}

fn read_frame(path: &Path) -> Result<Coords> {
    points_to_coords(&read_points(path)?).with_context(|| format!("{} is not voxelized", path.display()))
}

fn read_frames(dir: &Path) -> Result<Vec<Coords>> {
    ply_files(dir)?.iter().map(|p| read_frame(p)).collect()
}

fn write_frame(path: &Path, coords: &Coords, format: Format) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    write_ply_coords(&mut w, coords, format.into())?;
    w.flush()?;
    Ok(())
}

fn load_model(path: &Path) -> Result<Model> {
    Model::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn voxelize_cmd(input: &Path, output: &Path, depth: u32, format: Format) -> Result<()> {
    let points = read_points(input)?;
    let coords = voxelize(&points, depth)?;
    write_frame(output, &coords, format)?;
    eprintln!("{} points -> {} voxels at depth {depth}", points.len(), coords.len());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn train_cmd(
    frames: &[PathBuf],
    ckpt: &Path,
    config: Option<&Path>,
    preset: Option<Preset>,
    lambda: Option<f64>,
    steps: Option<usize>,
    seed: Option<u64>,
    blocks: &[usize],
    log_every: usize,
) -> Result<()> {
    let mut cfg = match (config, preset) {
        (Some(path), _) => CodecConfig::from_toml(&fs::read_to_string(path)?)?,
        (None, Some(Preset::Toy)) => CodecConfig::toy(),
        (None, _) => CodecConfig::default(),
    };
    if let Some(l) = lambda {
        cfg.lambda = l;
    }
    if let Some(s) = steps {
        cfg.steps = s;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let sequences: Vec<Vec<Coords>> = frames.iter().map(|d| read_frames(d)).collect::<Result<_>>()?;
    let groups: Vec<_> = blocks
        .iter()
        .map(|&b| training_pairs(&sequences, b))
        .collect::<dpcc::Result<_>>()?;
    ensure!(groups.iter().any(|g| !g.is_empty()), "need at least one sequence with two frames");

    let steps = cfg.steps;
    let mut trainer = Trainer::new(Model::new(cfg)?);
    let start = Instant::now();
    let mut js = Vec::with_capacity(steps);
    for step in 1..=steps {
        let t = trainer.step_grouped(&groups)?;
        js.push(t.j);
        if step % log_every.max(1) == 0 || step == steps {
            let avg = moving_average(&js, 50);
            eprintln!(
                "step {step:>6}  J {:.4} (avg {:.4})  rate {:.4} bpp  bce {:.4} {:.4} {:.4}  {:.0}s",
                t.j,
                avg[step - 1],
                t.rate_bpp,
                t.bce[0],
                t.bce[1],
                t.bce[2],
                start.elapsed().as_secs_f64()
            );
        }
    }
    let model = trainer.into_model();
    model.save(ckpt)?;
    eprintln!("saved {} (hash {:016x})", ckpt.display(), model.hash());
    Ok(())
}

fn encode_cmd(ckpt: &Path, frames: &Path, gop: Option<usize>, output: &Path) -> Result<()> {
    let model = load_model(ckpt)?;
    let frames = read_frames(frames)?;
    let gop = gop.unwrap_or(model.config.gop);
    let encoded = encode_sequence(&model, &frames, gop)?;
    let bits: Vec<_> = encoded.into_iter().map(|e| e.bitstream).collect();
    let bytes = write_sequence(&bits)?;
    fs::write(output, &bytes).with_context(|| format!("writing {}", output.display()))?;
    let points: usize = frames.iter().map(|f| f.len()).sum();
    eprintln!(
        "{} frames, {} bytes, {:.4} bpp",
        frames.len(),
        bytes.len(),
        8.0 * bytes.len() as f64 / points as f64
    );
    Ok(())
}

fn read_bitstream(path: &Path) -> Result<Vec<dpcc::codec::FrameBitstream>> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    read_sequence(&bytes).with_context(|| format!("parsing {}", path.display()))
}

fn decode_cmd(ckpt: &Path, input: &Path, outdir: &Path, format: Format) -> Result<()> {
    let model = load_model(ckpt)?;
    let frames = read_bitstream(input)?;
    let decoded = decode_sequence(&model, &frames)?;
    fs::create_dir_all(outdir)?;
    for (i, f) in decoded.iter().enumerate() {
        write_frame(&outdir.join(format!("{i:05}.ply")), f, format)?;
    }
    eprintln!("decoded {} frames into {}", decoded.len(), outdir.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn eval_cmd(
    reference: &Path,
    dec: &Path,
    bits: &Path,
    csv_path: &Path,
    sequence: Option<String>,
    point: Option<String>,
    append: bool,
    jobs: Option<usize>,
) -> Result<()> {
    let refs = ply_files(reference)?;
    let decs = ply_files(dec)?;
    let frames = read_bitstream(bits)?;
    ensure!(
        refs.len() == decs.len() && refs.len() == frames.len(),
        "{} reference frames, {} decoded frames, {} coded frames",
        refs.len(),
        decs.len(),
        frames.len()
    );
    let name = |p: &Path| p.file_stem().or(p.file_name()).map(|s| s.to_string_lossy().into_owned());
    let sequence = sequence.or_else(|| name(reference)).unwrap_or_default();
    let point = point.or_else(|| name(bits)).unwrap_or_default();

    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs.unwrap_or(0)).build()?;
    let rows: Vec<RdRow> = pool.install(|| {
        (0..frames.len())
            .into_par_iter()
            .map(|i| -> Result<RdRow> {
                let f = &frames[i];
                let psnr = d1_psnr(&read_frame(&refs[i])?, &read_frame(&decs[i])?, u32::from(f.depth))?;
                let (bpp_coords, bpp_feats, bpp_total) = f.bpp();
                Ok(RdRow {
                    sequence: sequence.clone(),
                    point: point.clone(),
                    frame: i,
                    frame_type: match f.frame_type {
                        FrameType::Intra => "I",
                        FrameType::Inter => "P",
                    }
                    .into(),
                    bpp_coords,
                    bpp_feats,
                    bpp_total,
                    d1_psnr: psnr,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let exists = append && csv_path.exists() && fs::metadata(csv_path)?.len() > 0;
    let file = fs::OpenOptions::new()
        .create(true)
        .write(true)
        .append(append)
        .truncate(!append)
        .open(csv_path)
        .with_context(|| format!("opening {}", csv_path.display()))?;
    let mut w = csv::WriterBuilder::new().has_headers(!exists).from_writer(file);
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    let n = rows.len() as f64;
    eprintln!(
        "{sequence} @ {point}: {} frames, mean {:.4} bpp, mean D1 PSNR {:.2} dB",
        rows.len(),
        rows.iter().map(|r| r.bpp_total).sum::<f64>() / n,
        rows.iter().map(|r| r.d1_psnr).sum::<f64>() / n
    );
    Ok(())
}

fn read_rows(path: &Path) -> Result<Vec<RdRow>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let rows = r.deserialize().collect::<std::result::Result<Vec<RdRow>, _>>()?;
    Ok(rows)
}

fn bdrate_cmd(test: &Path, anchor: &Path) -> Result<()> {
    let test = rd_curves(&read_rows(test)?);
    let anchor = rd_curves(&read_rows(anchor)?);
    let mut all = Vec::new();
    for (seq, t) in &test {
        let Some(a) = anchor.get(seq) else {
            eprintln!("{seq}: no anchor curve, skipped");
            continue;
        };
        match bd_rate(t, a) {
            Ok(v) => {
                println!("{seq}\t{v:.2}%");
                all.push(v);
            }
            Err(e) => eprintln!("{seq}: {e}"),
        }
    }
    if all.is_empty() {
        bail!("no sequence has usable curves in both files");
    }
    println!("average\t{:.2}%", all.iter().sum::<f64>() / all.len() as f64);
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Voxelize {
            input,
            output,
            depth,
            format,
        } => voxelize_cmd(&input, &output, depth, format),
        Command::Train {
            frames,
            ckpt,
            config,
            preset,
            lambda,
            steps,
            seed,
            blocks,
            log_every,
        } => train_cmd(&frames, &ckpt, config.as_deref(), preset, lambda, steps, seed, &blocks, log_every),
        Command::Encode { ckpt, frames, gop, output } => encode_cmd(&ckpt, &frames, gop, &output),
        Command::Decode {
            ckpt,
            input,
            outdir,
            format,
        } => decode_cmd(&ckpt, &input, &outdir, format),
        Command::Eval {
            reference,
            dec,
            bits,
            csv,
            sequence,
            point,
            append,
            jobs,
        } => eval_cmd(&reference, &dec, &bits, &csv, sequence, point, append, jobs),
        Command::Bdrate { test, anchor } => bdrate_cmd(&test, &anchor),
    }
}
