use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use sonarcodec::bitstream::{self, Mode};
use sonarcodec::codec::{checkpoint, codebook_utilization, train, CodecModel, TrainClip};
use sonarcodec::config::RunConfig;
use sonarcodec::dataset::{self, HELDOUT, TRAIN};
use sonarcodec::frame::Clip;
use sonarcodec::report::{self, EvalRow};
use sonarcodec::stream::{self, ChannelTrace, Payload, TraceStats};

#[derive(Parser)]
#[command(name = "sonarcodec", version, about = "Sonar video codec pipeline")]
struct Cli {
    /// `key = value` config file; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate training and held-out clips with their truth.
    Gen {
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute hedging pairs for every clip from its noisy frames.
    Proxy {
        #[arg(long)]
        data: PathBuf,
    },
    /// Train a codec on the training split.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
    },
    /// Encode a clip directory into `.scpf` frames.
    Encode {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decode `.scpf` frames into a clip directory.
    Decode {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Pyramid layer to decode (default: all scales).
        #[arg(long)]
        layer: Option<usize>,
    },
    /// Simulate streaming over a capacity trace.
    StreamSim {
        /// Preset name (shared-uplink, single-uplink) or a `second,mbps` CSV.
        #[arg(long)]
        trace: Option<String>,
        #[arg(long, value_enum, default_value_t = CodecKind::Scope)]
        codec: CodecKind,
        /// Report file (JSON line); printed to stdout as well.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the sampled trace as CSV.
        #[arg(long)]
        trace_out: Option<PathBuf>,
    },
    /// Score a model on the held-out split (reads clean frames and truth).
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one model per codebook size and compare high-frequency energy.
    AblateV {
        #[arg(long, value_delimiter = ',', required = true)]
        sizes: Vec<usize>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CodecKind {
    Scope,
    Raw,
}

fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for o in &cli.overrides {
        let (k, v) = o
            .split_once('=')
            .with_context(|| format!("--set expects KEY=VALUE, got {o:?}"))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn log_config(cfg: &RunConfig) {
    eprintln!("# resolved config");
    for line in cfg.to_text().lines() {
        eprintln!("#   {line}");
    }
}

fn require(path: &Path) -> Result<()> {
    if !path.exists() {
        bail!("input not found: {}", path.display());
    }
    Ok(())
}

fn load_model(path: &Path) -> Result<CodecModel> {
    require(path)?;
    checkpoint::load(path).with_context(|| format!("loading model {}", path.display()))
}

/// Accepts a clip directory or a scene directory holding `noisy/`.
fn load_clip(path: &Path) -> Result<Clip> {
    require(path)?;
    let dir = if path.join("clip.meta").exists() {
        path.to_path_buf()
    } else {
        path.join("noisy")
    };
    Ok(Clip::load(&dir).with_context(|| format!("reading clip {}", dir.display()))?.0)
}

fn gen(cfg: &RunConfig, out: &Path) -> Result<()> {
    let scene = cfg.scene();
    for (split, n) in [(TRAIN, cfg.n_clips), (HELDOUT, cfg.n_heldout)] {
        for i in 0..n {
            let seed = dataset::clip_seed(cfg.seed, split, i);
            let (truth, clip) = dataset::generate(&scene, seed)?;
            let dir = dataset::clip_dir(out, split, i);
            dataset::write_scene(&dir, &truth, &clip)?;
            eprintln!("{}: seed {seed}, dynamic fraction {:.3}", dir.display(), truth.dynamic_pixel_fraction);
        }
    }
    fs::write(out.join("run.cfg"), cfg.to_text())?;
    Ok(())
}

fn proxy(cfg: &RunConfig, data: &Path) -> Result<()> {
    require(data)?;
    let pc = cfg.proxy();
    for split in [TRAIN, HELDOUT] {
        if !data.join(split).exists() {
            continue;
        }
        for dir in dataset::clip_dirs(data, split)? {
            dataset::build_pairs(&dir, &pc)?;
            eprintln!("{}: hedging pairs written", dir.display());
        }
    }
    Ok(())
}

fn load_training_set(data: &Path) -> Result<Vec<TrainClip>> {
    require(data)?;
    dataset::clip_dirs(data, TRAIN)?
        .iter()
        .map(|d| dataset::read_train_clip(d).with_context(|| format!("reading {} (run `proxy` first?)", d.display())))
        .collect()
}

fn train_model(cfg: &RunConfig, clips: &[TrainClip], checkpoint: &Path) -> Result<CodecModel> {
    let mut tc = cfg.train();
    tc.checkpoint = Some(checkpoint.to_path_buf());
    let mut log = String::from("epoch\tsteps\tloss\thedging\tlayer1\tcodebook\tcommitment\tused\treseeded\n");
    let (model, _) = train(cfg.codec(), clips, &tc, |s, _| {
        eprintln!(
            "epoch {:>3}: loss {:.5} hedging {:.5} layer1 {:.5} codebook {:.5} used {}/{} reseeded {}",
            s.epoch, s.loss, s.hedging, s.layer1, s.codebook, s.used_entries, cfg.codebook_size, s.reseeded
        );
        log.push_str(&format!(
            "{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{}\t{}\n",
            s.epoch, s.steps, s.loss, s.hedging, s.layer1, s.codebook, s.commitment, s.used_entries, s.reseeded
        ));
    })?;
    fs::write(checkpoint.with_extension("log.tsv"), log)?;
    Ok(model)
}

fn encode(cfg: &RunConfig, model: &Path, input: &Path, out: &Path) -> Result<()> {
    let model = load_model(model)?;
    let clip = load_clip(input)?;
    fs::create_dir_all(out)?;
    let v = model.config.codebook_size;
    let mut bits = 0u64;
    let mut pixels = 0usize;
    for (i, f) in clip.frames.iter().enumerate() {
        let mode = if i as u64 % cfg.refresh_every == 0 { Mode::Full } else { Mode::DynamicOnly };
        let e = bitstream::pack_frame(&model.encode_latent(f)?, mode, i as u32, v)?;
        bits += e.payload_bits;
        pixels += f.len();
        fs::write(out.join(format!("frame_{i:06}.scpf")), &e.bytes)?;
    }
    println!("frames {}\tmean_bpp {:.6}", clip.len(), bits as f64 / pixels.max(1) as f64);
    Ok(())
}

fn decode(cfg: &RunConfig, model: &Path, input: &Path, out: &Path, layer: Option<usize>) -> Result<()> {
    let model = load_model(model)?;
    require(input)?;
    let mut files: Vec<PathBuf> = fs::read_dir(input)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    files.retain(|p| p.extension().is_some_and(|x| x == "scpf"));
    files.sort();
    if files.is_empty() {
        bail!("no .scpf files in {}", input.display());
    }
    let mut state = None;
    let mut frames = Vec::with_capacity(files.len());
    for f in &files {
        let bytes = fs::read(f)?;
        let frame = match layer {
            None => stream::receiver_reconstruct(&mut state, &bytes, &model, None)
                .with_context(|| format!("decoding {}", f.display()))?
                .frame,
            Some(l) => {
                let u = bitstream::unpack_frame(&bytes, &mut state).with_context(|| format!("decoding {}", f.display()))?;
                model.decode_layer(&u.pyramid, l)?.with_index(u.frame_index, 0)
            }
        };
        frames.push(frame);
    }
    let fps = cfg.fps;
    let frames = frames
        .into_iter()
        .map(|f| {
            let ts = (f.frame_index as f64 * 1000.0 / fps).round() as u64;
            let idx = f.frame_index;
            f.with_index(idx, ts)
        })
        .collect();
    Clip::new(frames, fps)?.save(out, cfg.seed)?;
    Ok(())
}

fn stream_sim(cfg: &RunConfig, trace: Option<&str>, codec: CodecKind, out: Option<&Path>, trace_out: Option<&Path>) -> Result<()> {
    let name = trace.unwrap_or(&cfg.trace);
    let tr = match TraceStats::preset(name) {
        Some(stats) => stream::sample_trace(stats, cfg.trace_duration_s, cfg.seed)?,
        None => {
            let p = Path::new(name);
            require(p)?;
            ChannelTrace::load(p)?
        }
    };
    if let Some(p) = trace_out {
        tr.save(p)?;
    }
    let n = (tr.duration_s() as f64 * cfg.fps).round() as usize;
    let payloads: Vec<Payload> = match codec {
        CodecKind::Scope => stream::codec_payloads(
            n,
            cfg.stream_width,
            cfg.stream_height,
            cfg.k,
            cfg.codebook_size,
            cfg.refresh_every,
        )?,
        CodecKind::Raw => stream::raw_payloads(n, cfg.stream_width, cfg.stream_height),
    };
    let report = stream::simulate(&payloads, cfg.fps, &tr, &cfg.queue()?)?;
    let line = report.to_json();
    println!("{line}");
    if let Some(p) = out {
        fs::write(p, format!("{line}\n"))?;
    }
    Ok(())
}

fn eval_rows(cfg: &RunConfig, model: &CodecModel, data: &Path) -> Result<Vec<EvalRow>> {
    let mut rows = Vec::new();
    for dir in dataset::clip_dirs(data, HELDOUT)? {
        let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let noisy = dataset::read_noisy(&dir)?;
        let clean = dataset::read_clean(&dir)?;
        let truth = dataset::read_truth(&dir)?;
        rows.extend(report::evaluate_clip(model, &name, &noisy, &clean, &truth, cfg.refresh_every)?);
    }
    Ok(rows)
}

fn eval(cfg: &RunConfig, model: &Path, data: &Path, out: Option<&Path>) -> Result<()> {
    let model = load_model(model)?;
    require(data)?;
    let mut rows = eval_rows(cfg, &model, data)?;
    rows.extend(report::method_means(&rows));
    let tsv = report::to_tsv(&rows);
    print!("{tsv}");
    if let Some(p) = out {
        fs::write(p, tsv)?;
    }
    Ok(())
}

fn ablate_v(cfg: &RunConfig, sizes: &[usize], data: &Path, out: &Path) -> Result<()> {
    let clips = load_training_set(data)?;
    fs::create_dir_all(out)?;
    let mut table = String::from("codebook_size\thf_energy\tssim_vs_clean\tused_entries\n");
    for &v in sizes {
        let mut c = cfg.clone();
        c.codebook_size = v;
        c.validate()?;
        let path = out.join(format!("model_v{v}.scpm"));
        eprintln!("training V = {v}");
        let model = train_model(&c, &clips, &path)?;
        let rows = eval_rows(&c, &model, data)?;
        let scope: Vec<&EvalRow> = rows.iter().filter(|r| r.method == "scope").collect();
        let n = scope.len().max(1) as f64;
        let hf = scope.iter().map(|r| r.hf_energy).sum::<f64>() / n;
        let s = scope.iter().map(|r| r.ssim_vs_clean).sum::<f64>() / n;
        let used = codebook_utilization(&model, clips.iter().flat_map(|c| &c.noisy.frames))?;
        table.push_str(&format!("{v}\t{hf:.6}\t{s:.4}\t{used}\n"));
    }
    print!("{table}");
    fs::write(out.join("ablate_v.tsv"), table)?;
    fs::write(out.join("run.cfg"), cfg.to_text())?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = resolve_config(&cli)?;
    log_config(&cfg);
    match &cli.command {
        Command::Gen { out } => gen(&cfg, out),
        Command::Proxy { data } => proxy(&cfg, data),
        Command::Train { data, model } => {
            let clips = load_training_set(data)?;
            train_model(&cfg, &clips, model).map(|_| ())
        }
        Command::Encode { model, input, out } => encode(&cfg, model, input, out),
        Command::Decode { model, input, out, layer } => decode(&cfg, model, input, out, *layer),
        Command::StreamSim { trace, codec, out, trace_out } => {
            stream_sim(&cfg, trace.as_deref(), *codec, out.as_deref(), trace_out.as_deref())
        }
        Command::Eval { model, data, out } => eval(&cfg, model, data, out.as_deref()),
        Command::AblateV { sizes, data, out } => ablate_v(&cfg, sizes, data, out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
