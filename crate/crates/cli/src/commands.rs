use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use evmic_core::classical::{evphase_recover, oracle_recover, GaborParams};
use evmic_core::dsp::{
    butterworth_highpass, estimate_noise_profile_quietest, evaluate, read_wav, spectral_subtract, stft,
    write_wav, write_wav_normalized, write_wav_stereo, MetricsReport, SpectralSubtraction,
};
use evmic_core::events::{
    accumulate_frame, crop_patches, read_events, voxelize, write_events, EventFormat, EventStream, RegionSpec,
    TimeWindow,
};
use evmic_core::kv::{Echo, KvConfig};
use evmic_core::learned::{
    auto_regions, forward_patches, load_samples, patch_statistics, train, write_loss_log, ModelParams, SampleConfig,
    TrainConfig,
};
use evmic_core::sim::{make_dataset, simulate_scene, DatasetConfig, SpeckleSceneConfig};
use evmic_core::{AudioSignal, Error, Execution};

use crate::plot::{spectrogram_image, to_gray, waveform_image, write_pgm};
use crate::regions::{parse_extent, parse_region_list, pool};
use crate::{Cli, Command, Method, PlotKind, PostFilter, UsageError};

const HIGHPASS_HZ: f64 = 60.0;
const HIGHPASS_ORDER: usize = 4;
/// Share of the quietest frames taken as the noise profile.
const NOISE_FRACTION: f64 = 0.1;

/// `path` with `suffix` appended to the full file name.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(suffix);
    path.with_file_name(name)
}

/// `dir/stem{tag}.ext` for per-region outputs.
fn tagged(path: &Path, tag: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    let ext = path.extension().and_then(|s| s.to_str()).unwrap_or("wav");
    path.with_file_name(format!("{stem}{tag}.{ext}"))
}

fn write_sidecar(out: &Path, echo: &Echo) -> Result<()> {
    echo.write(sibling(out, ".config.txt"))?;
    Ok(())
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    let seed = cli.seed;
    match cli.command {
        Command::Simulate { config, audio, out, truth, duration } => {
            simulate(config.as_deref(), &audio, &out, truth, duration, seed)
        }
        Command::Dataset { config, audio_dir, out_dir } => dataset(config.as_deref(), &audio_dir, &out_dir, seed),
        Command::Recover { events, method, model, regions, rate, patch, max_regions, postprocess, stereo, out } => {
            let opts = RecoverOptions { method, model, regions, rate, patch, max_regions, postprocess, stereo };
            recover(&events, &opts, &out, seed)
        }
        Command::Train { manifest, config, out, log, resume } => {
            if resume.is_some() {
                return Err(UsageError("--resume is not supported; training always starts from a fresh model".into()).into());
            }
            train_cmd(&manifest, config.as_deref(), &out, log, seed)
        }
        Command::Evaluate { reference, estimate, speech, out } => evaluate_cmd(&reference, &estimate, speech, out, seed),
        Command::Plot { input, kind, out, window, hop } => plot_cmd(&input, kind, &out, window, hop, seed),
    }
}

fn simulate(
    config: Option<&Path>,
    audio_path: &Path,
    out: &Path,
    truth: Option<PathBuf>,
    duration: Option<f64>,
    seed: Option<u64>,
) -> Result<()> {
    let mut scene = match config {
        Some(p) => SpeckleSceneConfig::load(p)?,
        None => SpeckleSceneConfig::default(),
    };
    if let Some(s) = seed {
        scene.rng_seed = s;
    }
    let mut audio = read_wav(audio_path)?;
    if audio.is_empty() {
        return Err(Error::Empty(format!("{} holds no samples", audio_path.display())).into());
    }
    if audio.sample_rate < scene.frame_rate {
        audio = audio.resample_linear(scene.frame_rate)?;
    }
    let truth = truth.unwrap_or_else(|| out.with_extension("truth.wav"));
    if truth == audio_path || out == audio_path {
        return Err(UsageError(format!("refusing to overwrite the input {}", audio_path.display())).into());
    }
    let duration = duration.unwrap_or(audio.duration_s());
    let (events, gt) = simulate_scene(&scene, &audio, duration)?;
    ensure_parent(out)?;
    write_events(&events, out, EventFormat::from_path(out))?;
    write_wav(&truth, &gt)?;
    let mut echo = scene.echo();
    echo.set("command", "simulate")
        .set("audio", audio_path.display())
        .set("duration", duration)
        .set("events", out.display())
        .set("truth", truth.display());
    write_sidecar(out, &echo)?;
    println!("{} events, {} truth samples at {} Hz", events.len(), gt.len(), gt.sample_rate);
    Ok(())
}

fn dataset(config: Option<&Path>, audio_dir: &Path, out_dir: &Path, seed: Option<u64>) -> Result<()> {
    let mut cfg = match config {
        Some(p) => DatasetConfig::from_kv(&KvConfig::load(p)?)?,
        None => DatasetConfig::default(),
    };
    if let Some(s) = seed {
        cfg.master_seed = s;
        cfg.scene.rng_seed = s;
    }
    let manifest = make_dataset(&cfg, audio_dir, out_dir)?;
    let mut echo = cfg.echo();
    echo.set("command", "dataset").set("audio_dir", audio_dir.display()).set("out_dir", out_dir.display());
    write_sidecar(&manifest, &echo)?;
    println!("wrote {}", manifest.display());
    Ok(())
}

struct RecoverOptions {
    method: Method,
    model: Option<PathBuf>,
    regions: String,
    rate: u32,
    patch: String,
    max_regions: usize,
    postprocess: Vec<PostFilter>,
    stereo: bool,
}

fn method_name(m: Method) -> &'static str {
    match m {
        Method::Evphase => "evphase",
        Method::Oracle => "oracle",
        Method::Learned => "learned",
    }
}

fn postprocess(signal: AudioSignal, filters: &[PostFilter]) -> Result<AudioSignal> {
    let mut s = signal;
    for f in filters {
        s = match f {
            PostFilter::Highpass => butterworth_highpass(&s, HIGHPASS_HZ, HIGHPASS_ORDER, true)?,
            PostFilter::Specsub => {
                let params = SpectralSubtraction::default();
                let profile = estimate_noise_profile_quietest(&s, &params, NOISE_FRACTION)?;
                spectral_subtract(&s, &profile)?
            }
        };
    }
    Ok(s)
}

/// Analysis window `[0, last event]` split into bins at `rate`.
fn analysis_window(stream: &EventStream, rate: u32) -> Result<(TimeWindow, usize)> {
    let span = stream.span().ok_or_else(|| Error::Empty("event file holds no events".into()))?;
    let window = TimeWindow::new(0, span.end_us)?;
    let bins = ((window.duration_s() * rate as f64).round() as usize).max(2);
    Ok((window, bins))
}

fn recover(events_path: &Path, opts: &RecoverOptions, out: &Path, seed: Option<u64>) -> Result<()> {
    if opts.rate == 0 {
        return Err(UsageError("--rate must be positive".into()).into());
    }
    let model = match (opts.method, &opts.model) {
        (Method::Learned, None) => return Err(UsageError("--method learned requires --model".into()).into()),
        (Method::Learned, Some(p)) => Some(ModelParams::load(p)?),
        _ => None,
    };
    let extent = parse_extent(&opts.patch)?;
    let stream = read_events(events_path)?;
    let (window, bins) = analysis_window(&stream, opts.rate)?;
    let regions: Vec<RegionSpec> = if opts.regions.trim() == "auto" {
        let cfg = SampleConfig { bins, sample_rate: opts.rate, patch_extent: extent, max_patches: opts.max_regions, ..Default::default() };
        auto_regions(&stream, window, &cfg)?
    } else {
        parse_region_list(&opts.regions)?
    };
    if opts.stereo && regions.len() < 2 {
        return Err(UsageError(format!("--stereo needs two regions, found {}", regions.len())).into());
    }
    let voxel = voxelize(&stream, bins, window)?;
    if voxel.total() == 0.0 {
        return Err(Error::Empty("no events inside the analysis window".into()).into());
    }
    let sample_rate = opts.rate;
    let (per_region, pooled) = match opts.method {
        Method::Learned => {
            let params = model.expect("model loaded above");
            let stats = patch_statistics(&crop_patches(&voxel, &regions)?);
            let o = forward_patches(&stats, &params, Execution::default())?;
            let wrap = |samples: Vec<f64>| AudioSignal { sample_rate, samples };
            (o.per_patch.into_iter().map(wrap).collect::<Vec<_>>(), wrap(o.pooled))
        }
        Method::Evphase | Method::Oracle => {
            let mut signals = Vec::with_capacity(regions.len());
            for r in &regions {
                let mut s = match opts.method {
                    Method::Evphase => evphase_recover(&voxel, &GaborParams::default(), r)?,
                    _ => oracle_recover(&voxel, r)?,
                };
                s.sample_rate = sample_rate;
                signals.push(s);
            }
            let pooled = pool(&signals);
            (signals, pooled)
        }
    };
    if pooled.samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("recovered signal is not finite".into()).into());
    }
    ensure_parent(out)?;
    let pooled = postprocess(pooled, &opts.postprocess)?;
    write_wav_normalized(out, &pooled)?;
    let mut processed = Vec::with_capacity(per_region.len());
    if per_region.len() > 1 {
        for (r, s) in regions.iter().zip(per_region) {
            let s = postprocess(s, &opts.postprocess)?;
            write_wav_normalized(tagged(out, &format!(".region{}", r.id)), &s)?;
            processed.push(s);
        }
    }
    if opts.stereo {
        write_wav_stereo(tagged(out, ".stereo"), &processed[0], &processed[1])?;
    }
    let mut echo = Echo::default();
    echo.set("command", "recover")
        .set("events", events_path.display())
        .set("method", method_name(opts.method))
        .set("rate", opts.rate)
        .set("bins", bins)
        .set("window_us", format!("{} {}", window.start_us, window.end_us))
        .set("postprocess", opts.postprocess.iter().map(|f| format!("{f:?}").to_lowercase()).collect::<Vec<_>>().join(","))
        .set("stereo", opts.stereo);
    if let Some(m) = &opts.model {
        echo.set("model", m.display());
    }
    if let Some(s) = seed {
        echo.set("seed", s);
    }
    for r in &regions {
        echo.set("region", format!("{} {} {} {}", r.center.0, r.center.1, r.extent.0, r.extent.1));
    }
    write_sidecar(out, &echo)?;
    println!("{} region(s), {} samples at {} Hz", regions.len(), pooled.len(), sample_rate);
    Ok(())
}

fn train_cmd(manifest: &Path, config: Option<&Path>, out: &Path, log: Option<PathBuf>, seed: Option<u64>) -> Result<()> {
    let mut cfg = match config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = seed {
        cfg.rng_seed = s;
    }
    cfg.validate()?;
    let samples = load_samples(manifest, &cfg.sample)?;
    let outcome = train(&samples, &cfg)?;
    ensure_parent(out)?;
    outcome.params.save(out)?;
    let log = log.unwrap_or_else(|| out.with_extension("loss.csv"));
    write_loss_log(&log, &outcome.log)?;
    let mut echo = cfg.echo();
    echo.set("command", "train").set("manifest", manifest.display()).set("log", log.display());
    write_sidecar(out, &echo)?;
    if let (Some(first), Some(last)) = (outcome.log.first(), outcome.log.last()) {
        println!("{} samples, loss {:.3} -> {:.3}", samples.len(), first.loss.total, last.loss.total);
    }
    Ok(())
}

fn evaluate_cmd(reference: &Path, estimate: &Path, speech: bool, out: Option<PathBuf>, seed: Option<u64>) -> Result<()> {
    let r = read_wav(reference)?;
    let e = read_wav(estimate)?;
    let report = evaluate(&r, &e, speech)?;
    let out = out.unwrap_or_else(|| estimate.with_extension("metrics.csv"));
    ensure_parent(&out)?;
    let text = format!("{}\n{}\n", MetricsReport::CSV_HEADER, report.csv_row());
    std::fs::write(&out, &text).with_context(|| format!("writing {}", out.display()))?;
    print!("{text}");
    let mut echo = Echo::default();
    echo.set("command", "evaluate")
        .set("reference", reference.display())
        .set("estimate", estimate.display())
        .set("speech", speech);
    if let Some(s) = seed {
        echo.set("seed", s);
    }
    write_sidecar(&out, &echo)?;
    Ok(())
}

fn write_csv(path: &Path, header: &str, rows: impl Iterator<Item = String>) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?);
    writeln!(f, "{header}")?;
    for r in rows {
        writeln!(f, "{r}")?;
    }
    f.flush()?;
    Ok(())
}

fn read_nonempty_wav(path: &Path) -> Result<AudioSignal> {
    let s = read_wav(path)?;
    if s.is_empty() {
        return Err(Error::Empty(format!("{} holds no samples", path.display())).into());
    }
    Ok(s)
}

fn plot_cmd(input: &Path, kind: PlotKind, out: &Path, window: usize, hop: usize, seed: Option<u64>) -> Result<()> {
    ensure_parent(out)?;
    let csv = out.with_extension("csv");
    let kind_name = match kind {
        PlotKind::Spectrogram => {
            let s = read_nonempty_wav(input)?;
            let spec = stft(&s, window, hop)?;
            let (w, h, img) = spectrogram_image(&spec.magnitudes);
            write_pgm(out, w, h, &img)?;
            let track = spec.peak_track_hz();
            let rows = track.iter().enumerate().map(|(i, f)| format!("{i},{:.6},{f:.3}", (i * hop) as f64 / s.sample_rate as f64));
            write_csv(&csv, "frame,time_s,peak_hz", rows)?;
            "spectrogram"
        }
        PlotKind::Waveform => {
            let s = read_nonempty_wav(input)?;
            let (w, h) = (s.len().clamp(1, 1024), 256);
            write_pgm(out, w, h, &waveform_image(&s.samples, w, h))?;
            let rows = s.samples.iter().enumerate().map(|(i, v)| format!("{i},{:.8},{v}", i as f64 / s.sample_rate as f64));
            write_csv(&csv, "index,time_s,value", rows)?;
            "waveform"
        }
        PlotKind::Eventframe => {
            let stream = read_events(input)?;
            let span = stream.span().ok_or_else(|| Error::Empty("event file holds no events".into()))?;
            let frame = accumulate_frame(&stream, span)?;
            let peak = frame.data.iter().copied().max().unwrap_or(0) as f64;
            let values: Vec<f64> = frame.data.iter().map(|&c| c as f64).collect();
            write_pgm(out, frame.width, frame.height, &to_gray(&values, 0.0, peak))?;
            let rows = frame
                .data
                .chunks(frame.width)
                .map(|row| row.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(","));
            let header = (0..frame.width).map(|x| format!("x{x}")).collect::<Vec<_>>().join(",");
            write_csv(&csv, &header, rows)?;
            "eventframe"
        }
    };
    let mut echo = Echo::default();
    echo.set("command", "plot").set("input", input.display()).set("kind", kind_name).set("data", csv.display());
    if kind == PlotKind::Spectrogram {
        echo.set("window", window).set("hop", hop);
    }
    if let Some(s) = seed {
        echo.set("seed", s);
    }
    write_sidecar(out, &echo)?;
    Ok(())
}
