//! `braille`: detect, de-skew, decode and evaluate Braille dots on scanned
//! pages, generate synthetic data, train the cascade detector and run the
//! annotation service.
//!
//! Exit codes: 0 success, 1 internal failure, 2 usage or input error.

use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{Context, Result};
use braille_cli::service::{load_pages, router, AppState};
use braille_cli::{exit_code, usage};
use braille_core::annotation::{
    import_dsbi, load_manifest, read_any_annotation, write_annotation, write_manifest, DatasetManifest, Frame,
    ManifestEntry, PageAnnotation, Split,
};
use braille_core::cascade::{train_cascade, Cascade, CascadeConfig, TrainingPage};
use braille_core::deskew::{apply_deskew, deskew_page, SkewConfig, SkewEstimate};
use braille_core::eval::{default_tolerance, render_book_breakdown, render_report};
use braille_core::pipeline::{decode_page, evaluate_method, Detector, PipelineOptions};
use braille_core::raster::{load_gray, save_png};
use braille_core::synth::{random_sheet, render_double_sided, RandomSheetOptions};
use braille_core::{GrayImage, GridGeometry, Point, Side};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

#[derive(Parser)]
#[command(name = "braille", version, about = "Optical Braille recognition for scanned double-sided pages")]
struct Cli {
    /// Scan resolution; sets the Braille cell geometry.
    #[arg(long, global = true, default_value_t = 200.0)]
    dpi: f64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Detect dots on one page and write an annotation file.
    Detect(DetectArgs),
    /// Estimate the page skew and write the straightened image.
    Deskew(DeskewArgs),
    /// Recognize the Braille text of one page.
    Decode(DecodeArgs),
    /// Score a detector against a labelled dataset.
    Evaluate(EvaluateArgs),
    /// Train the cascade detector on the training split of a dataset.
    Train(TrainArgs),
    /// Generate synthetic pages with exact ground truth.
    Synth(SynthArgs),
    /// Serve pages for interactive annotation over HTTP.
    Annotate(AnnotateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum DetectorKind {
    Segmentation,
    Cascade,
}

#[derive(Args)]
struct DetectorArgs {
    #[arg(long, value_enum, default_value = "segmentation")]
    detector: DetectorKind,
    /// Cascade model file, required by the cascade detector.
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Args)]
struct DetectArgs {
    #[arg(long)]
    input: PathBuf,
    /// Annotation JSON; printed to stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Also detect verso (show-through) dots.
    #[arg(long)]
    verso: bool,
    /// PNG with detections marked: recto black, verso white.
    #[arg(long)]
    overlay: Option<PathBuf>,
    #[command(flatten)]
    detector: DetectorArgs,
}

#[derive(Args)]
struct DeskewArgs {
    #[arg(long)]
    input: PathBuf,
    /// Straightened PNG.
    #[arg(long)]
    output: PathBuf,
    /// Annotation of the input image holding the straightened recto dots.
    #[arg(long)]
    annotation: Option<PathBuf>,
    #[command(flatten)]
    detector: DetectorArgs,
}

#[derive(Args)]
struct DecodeArgs {
    #[arg(long)]
    input: PathBuf,
    /// Text file; printed to stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
    #[command(flatten)]
    detector: DetectorArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Args)]
struct EvaluateArgs {
    /// CSV manifest or DSBI checkout directory.
    #[arg(long)]
    input: PathBuf,
    /// JSON report file.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    /// Match distance in pixels; defaults to the dot-radius rule.
    #[arg(long)]
    tolerance: Option<f64>,
    #[command(flatten)]
    detector: DetectorArgs,
}

#[derive(Args)]
struct TrainArgs {
    /// CSV manifest or DSBI checkout directory.
    #[arg(long)]
    input: PathBuf,
    /// Model file to write.
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = CascadeConfig::default().max_stages)]
    max_stages: usize,
}

#[derive(Args)]
struct SynthArgs {
    /// Directory for images, annotations, texts and manifest.csv.
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 20)]
    pages: usize,
    /// How many of the pages go to the training split.
    #[arg(long, default_value_t = 0)]
    train: usize,
    /// Gaussian noise sigma in gray levels.
    #[arg(long, default_value_t = 8.0)]
    noise: f64,
    /// Page skew is drawn uniformly from [-skew, skew] degrees.
    #[arg(long, default_value_t = 0.0)]
    skew: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "synthetic")]
    book: String,
}

#[derive(Args)]
struct AnnotateArgs {
    /// CSV manifest, DSBI checkout or directory of images.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    listen: String,
    /// Directory with the browser editor, served at other paths.
    #[arg(long)]
    assets: Option<PathBuf>,
    #[command(flatten)]
    detector: DetectorArgs,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}

/// The error chain on one line, skipping causes already spelled out by
/// their parent.
fn describe(err: &anyhow::Error) -> String {
    let mut text = String::new();
    for cause in err.chain() {
        let part = cause.to_string();
        if !text.contains(&part) {
            if !text.is_empty() {
                text.push_str(": ");
            }
            text.push_str(&part);
        }
    }
    text
}

fn run(cli: Cli) -> Result<()> {
    if !(cli.dpi.is_finite() && (50.0..=2400.0).contains(&cli.dpi)) {
        return Err(usage(format!("--dpi {} is outside 50..=2400", cli.dpi)));
    }
    let geometry = GridGeometry::at_dpi(cli.dpi);
    match cli.command {
        Command::Detect(a) => detect(a, geometry),
        Command::Deskew(a) => deskew(a, geometry),
        Command::Decode(a) => decode(a, geometry),
        Command::Evaluate(a) => evaluate(a, geometry),
        Command::Train(a) => train(a, geometry),
        Command::Synth(a) => synth(a, geometry),
        Command::Annotate(a) => annotate(a, geometry),
    }
}

fn build_detector(args: &DetectorArgs, geometry: GridGeometry) -> Result<Detector> {
    match args.detector {
        DetectorKind::Segmentation => Ok(Detector::segmentation(geometry)),
        DetectorKind::Cascade => {
            let path = args
                .model
                .as_ref()
                .ok_or_else(|| usage("the cascade detector needs --model PATH"))?;
            let cascade = Cascade::load(path).context("loading the cascade model")?;
            Ok(Detector::cascade(cascade, geometry))
        }
    }
}

fn file_name(path: &Path) -> String {
    path.file_name().unwrap_or_default().to_string_lossy().into_owned()
}

fn write_or_print(output: Option<&Path>, text: &str) -> Result<()> {
    match output {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn mark(img: &mut GrayImage, p: Point, value: u8) {
    let (cx, cy) = (p.x.round() as i64, p.y.round() as i64);
    for d in -3i64..=3 {
        for (x, y) in [(cx + d, cy), (cx, cy + d)] {
            if x >= 0 && y >= 0 && (x as usize) < img.width() && (y as usize) < img.height() {
                img.set(x as usize, y as usize, value);
            }
        }
    }
}

fn detect(a: DetectArgs, geometry: GridGeometry) -> Result<()> {
    let detector = build_detector(&a.detector, geometry)?;
    let img = load_gray(&a.input)?;
    let mut ann = PageAnnotation::new(file_name(&a.input), img.width(), img.height());
    ann.recto = detector.detect(&img, Side::Recto).points();
    if a.verso {
        ann.verso = detector.detect(&img, Side::Verso).points();
    }
    ann.metadata.insert("detector".into(), detector.id().into());
    eprintln!("{} recto, {} verso dots", ann.recto.len(), ann.verso.len());
    if let Some(path) = &a.overlay {
        let mut canvas = img.clone();
        ann.verso.iter().for_each(|&p| mark(&mut canvas, p, 255));
        ann.recto.iter().for_each(|&p| mark(&mut canvas, p, 0));
        save_png(&canvas, path)?;
    }
    match &a.output {
        Some(path) => write_annotation(&ann, path)?,
        None => println!("{}", ann.to_json()?),
    }
    Ok(())
}

fn deskew(a: DeskewArgs, geometry: GridGeometry) -> Result<()> {
    let detector = build_detector(&a.detector, geometry)?;
    let img = load_gray(&a.input)?;
    let dots = detector.detect(&img, Side::Recto);
    let (straight, aligned, estimate) = deskew_page(&img, &dots, &SkewConfig::default())?;
    save_png(&straight, &a.output)?;
    println!("skew {:.3} deg", estimate.angle_deg);
    if let Some(path) = &a.annotation {
        let mut ann = PageAnnotation::new(file_name(&a.input), img.width(), img.height());
        ann.frame = Frame::Deskewed;
        ann.skew_deg = estimate.angle_deg;
        ann.recto = aligned.points();
        ann.metadata.insert("detector".into(), detector.id().into());
        write_annotation(&ann.rounded(), path)?;
    }
    Ok(())
}

fn decode(a: DecodeArgs, geometry: GridGeometry) -> Result<()> {
    let detector = build_detector(&a.detector, geometry)?;
    let img = load_gray(&a.input)?;
    let (text, auto) = decode_page(&img, &detector, &PipelineOptions::default())?;
    for w in &auto.warnings {
        log::warn!("{w}");
    }
    write_or_print(a.output.as_deref(), &text.to_string())
}

/// A CSV manifest file or a DSBI checkout directory.
fn load_dataset(input: &Path) -> Result<DatasetManifest> {
    let manifest = if input.is_dir() {
        import_dsbi(input)?
    } else {
        load_manifest(input)?
    };
    for w in &manifest.warnings {
        log::warn!("{w}");
    }
    Ok(manifest)
}

fn evaluate(a: EvaluateArgs, geometry: GridGeometry) -> Result<()> {
    let detector = build_detector(&a.detector, geometry)?;
    let manifest = load_dataset(&a.input)?;
    let split = Split::from(a.split);
    if manifest.split(split).next().is_none() {
        return Err(usage(format!("{} has no {split} pages", a.input.display())));
    }
    let tolerance = a.tolerance.unwrap_or_else(|| default_tolerance(&geometry));
    if !(tolerance.is_finite() && tolerance > 0.0) {
        return Err(usage(format!("--tolerance {tolerance} must be positive")));
    }
    let report = evaluate_method(&detector, &manifest, split, tolerance);
    print!("{}", render_report(std::slice::from_ref(&report)));
    println!();
    print!("{}", render_book_breakdown(&report));
    for note in &report.notes {
        println!("note: {note}");
    }
    if let Some(path) = &a.output {
        fs::write(path, report.to_json()).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn training_page(entry: &ManifestEntry) -> Result<TrainingPage> {
    let ann = read_any_annotation(&entry.annotation, Some(&entry.image))?;
    let mut image = load_gray(&entry.image)?;
    if ann.frame == Frame::Deskewed && ann.skew_deg != 0.0 {
        image = apply_deskew(&image, &SkewEstimate::known(ann.skew_deg));
    }
    Ok(TrainingPage {
        image,
        recto: ann.recto,
        verso: ann.verso,
    })
}

fn train(a: TrainArgs, geometry: GridGeometry) -> Result<()> {
    let manifest = load_dataset(&a.input)?;
    let entries: Vec<&ManifestEntry> = manifest.split(Split::Train).collect();
    if entries.is_empty() {
        return Err(usage(format!("{} has no train pages", a.input.display())));
    }
    let pages = entries
        .par_iter()
        .map(|e| training_page(e).with_context(|| format!("loading {}", e.image.display())))
        .collect::<Result<Vec<_>>>()?;
    let config = CascadeConfig {
        geometry,
        seed: a.seed,
        max_stages: a.max_stages,
        ..CascadeConfig::default()
    };
    let cascade = train_cascade(&pages, &config)?;
    cascade.save(&a.output)?;
    println!("{} stages from {} pages", cascade.stages.len(), pages.len());
    Ok(())
}

fn synth(a: SynthArgs, geometry: GridGeometry) -> Result<()> {
    if a.pages == 0 {
        return Err(usage("--pages must be at least 1"));
    }
    if a.train > a.pages {
        return Err(usage(format!("--train {} exceeds --pages {}", a.train, a.pages)));
    }
    if !(a.noise.is_finite() && a.noise >= 0.0) {
        return Err(usage("--noise must be non-negative"));
    }
    if !(a.skew.is_finite() && (0.0..=45.0).contains(&a.skew)) {
        return Err(usage("--skew must be within 0..=45 degrees"));
    }
    fs::create_dir_all(&a.output).with_context(|| format!("creating {}", a.output.display()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let skews: Vec<f64> = (0..a.pages)
        .map(|_| if a.skew > 0.0 { rng.random_range(-a.skew..=a.skew) } else { 0.0 })
        .collect();
    let scale = geometry.dot_pitch / GridGeometry::default().dot_pitch;
    let base = RandomSheetOptions::default();
    let entries = (0..a.pages)
        .into_par_iter()
        .map(|i| -> Result<ManifestEntry> {
            let opts = RandomSheetOptions {
                width: (base.width as f64 * scale).round() as usize,
                height: (base.height as f64 * scale).round() as usize,
                geometry,
                margin: base.margin * scale,
                min_separation: 1.2 * geometry.dot_diameter,
                noise_sigma: a.noise,
                skew_deg: skews[i],
                ..base.clone()
            };
            let (front, back, _) = random_sheet(&opts, a.seed.wrapping_mul(1_000_003).wrapping_add(i as u64));
            let ((img, mut ann), _) = render_double_sided(&front, &back)?;
            let stem = format!("page_{i:03}");
            let image = a.output.join(format!("{stem}.png"));
            let annotation = a.output.join(format!("{stem}.json"));
            ann.image = format!("{stem}.png");
            save_png(&img, &image)?;
            write_annotation(&ann, &annotation)?;
            let text = front.recto.as_ref().map(|l| l.to_text()).unwrap_or_default();
            fs::write(a.output.join(format!("{stem}.txt")), text)?;
            Ok(ManifestEntry {
                image,
                annotation,
                book: a.book.clone(),
                split: if i < a.train { Split::Train } else { Split::Test },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    write_manifest(&entries, a.output.join("manifest.csv"))?;
    println!("wrote {} pages to {}", entries.len(), a.output.display());
    Ok(())
}

fn annotate(a: AnnotateArgs, geometry: GridGeometry) -> Result<()> {
    let detector = build_detector(&a.detector, geometry)?;
    let pages = load_pages(&a.input)?;
    if pages.is_empty() {
        return Err(usage(format!("{} holds no pages", a.input.display())));
    }
    if let Some(dir) = &a.assets {
        if !dir.is_dir() {
            return Err(usage(format!("--assets {} is not a directory", dir.display())));
        }
    }
    let addr: SocketAddr = a
        .listen
        .parse()
        .map_err(|e| usage(format!("--listen {}: {e}", a.listen)))?;
    let count = pages.len();
    let state = Arc::new(AppState::new(pages, detector, PipelineOptions::default()));
    let app = router(state, a.assets.as_deref());
    let runtime = tokio::runtime::Runtime::new().context("starting the async runtime")?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| usage(format!("cannot listen on {addr}: {e}")))?;
        eprintln!("serving {count} pages on http://{}", listener.local_addr()?);
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .context("serving")
    })
}
