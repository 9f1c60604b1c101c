//! `speclidar` command-line driver.

mod config;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use config::RunConfig;
use speclidar::export::{read_points_csv, to_json, write_points_csv, write_points_ply};
use speclidar::pipeline::{
    evaluate, reconstruct, sense, simulate, Diagnostics, GroundTruth, Metrics, Mode, Reconstruction, SimulateOptions,
    SpotsFile, SCHEMA_VERSION,
};
use speclidar::presets;
use speclidar::scene_file::{load_scene, SceneSpec};

const OUT_ENV: &str = "SPECLIDAR_OUT";
const DEFAULT_OUT: &str = "speclidar-out";

const RUN_FILE: &str = "run.json";
const SPOTS_FILE: &str = "spots.json";
const SENSED_FILE: &str = "sensed_spots.json";
const TRUTH_FILE: &str = "ground_truth.json";
const CSV_FILE: &str = "points.csv";
const PLY_FILE: &str = "points.ply";
const DIAG_FILE: &str = "diagnostics.json";
const METRICS_FILE: &str = "metrics.json";

#[derive(Parser)]
#[command(name = "speclidar", version, about = "Specular surface mapping from multibounce lidar returns")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Trace the scene and write ideal spots plus ground truth.
    Simulate(Common),
    /// Render spots into photon histograms and extract spots from them.
    Sense {
        #[command(flatten)]
        common: Common,
        /// Also write every per-beam histogram cube under `cubes/`.
        #[arg(long)]
        cubes: bool,
    },
    /// Turn spots into a labelled point cloud.
    Reconstruct(Common),
    /// Score a point cloud against ground truth.
    Evaluate(Common),
    /// Simulate, optionally sense, reconstruct and evaluate in one go.
    Run(Common),
    /// List the bundled scenes.
    Scenes,
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum ModeArg {
    SingleBeam,
    MultiBeam,
    Naive,
    Transparent,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::SingleBeam => Mode::SingleBeam,
            ModeArg::MultiBeam => Mode::MultiBeam,
            ModeArg::Naive => Mode::Naive,
            ModeArg::Transparent => Mode::Transparent,
        }
    }
}

/// Flags shared by every stage. Each one overrides the matching config field.
#[derive(Args, Clone, Default)]
struct Common {
    /// Scene file, or `bundled:NAME` for a shipped scene.
    #[arg(long)]
    scene: Option<String>,
    /// Run configuration TOML.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory. Defaults to $SPECLIDAR_OUT, then `speclidar-out`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Directory holding earlier stage outputs. Defaults to the output directory.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Use the histogram sensing path.
    #[arg(long)]
    sensor: bool,
    /// Skip the scene's spot perturbation.
    #[arg(long)]
    ideal: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    detection_floor: Option<f64>,
    /// On-beam tolerance in degrees.
    #[arg(long)]
    beam_tol_deg: Option<f64>,
    #[arg(long)]
    ransac_iterations: Option<usize>,
    #[arg(long)]
    ransac_seed: Option<u64>,
    #[arg(long)]
    fa_probability: Option<f64>,
    #[arg(long)]
    spottiness: Option<f64>,
}

impl Common {
    fn apply(&self, c: &mut RunConfig) {
        if let Some(s) = &self.scene {
            c.scene = Some(s.clone());
        }
        if let Some(o) = &self.out {
            c.out = Some(o.clone());
        }
        if let Some(m) = self.mode {
            c.mode = m.into();
        }
        c.sensor |= self.sensor;
        c.ideal |= self.ideal;
        if self.seed.is_some() {
            c.seed = self.seed;
        }
        if self.detection_floor.is_some() {
            c.detection_floor = self.detection_floor;
        }
        if let Some(t) = self.beam_tol_deg {
            c.recon.single_beam.beam_tol = t.to_radians();
            c.recon.multi_beam.beam_tol = t.to_radians();
        }
        if let Some(k) = self.ransac_iterations {
            c.recon.multi_beam.ransac.k = k;
        }
        if let Some(s) = self.ransac_seed {
            c.recon.multi_beam.ransac.seed = s;
        }
        if let Some(p) = self.fa_probability {
            c.sensing.fa_probability = p;
        }
        if let Some(s) = self.spottiness {
            c.sensing.spot.spottiness_threshold = s;
        }
    }
}

/// Provenance of a run, written by `simulate` and read by later stages.
#[derive(Debug, Serialize, Deserialize)]
struct RunDoc {
    schema_version: u32,
    run_id: String,
    config: RunConfig,
    scene_text: String,
}

/// Everything a stage needs, after merging run.json, the config file and flags.
struct Ctx {
    config: RunConfig,
    scene_text: String,
    spec: SceneSpec,
    out: PathBuf,
    input: PathBuf,
}

fn scene_source(s: &str) -> Result<String> {
    if let Some(name) = s.strip_prefix("bundled:") {
        match presets::bundled(name) {
            Some(t) => Ok(t.to_owned()),
            None => bail!("no bundled scene `{name}` (available: {})", presets::names().collect::<Vec<_>>().join(", ")),
        }
    } else {
        fs::read_to_string(s).with_context(|| format!("reading scene {s}"))
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let f = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    serde_json::from_reader(BufReader::new(f)).with_context(|| format!("parsing {}", path.display()))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn with_writer(path: &Path, f: impl FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>) -> Result<()> {
    let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    f(&mut w).and_then(|_| w.flush()).with_context(|| format!("writing {}", path.display()))
}

/// FNV-1a, 64 bit.
fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

/// Identifies a run by scene content and every setting except file locations.
fn run_id(scene_text: &str, config: &RunConfig) -> String {
    let mut c = config.clone();
    c.scene = None;
    c.out = None;
    let mut bytes = scene_text.as_bytes().to_vec();
    bytes.push(0);
    bytes.extend(serde_json::to_vec(&c).expect("config serializes"));
    format!("{:016x}", fnv1a(&bytes))
}

fn resolve(common: &Common, fresh: bool) -> Result<Ctx> {
    let input_hint = common.input.clone().or_else(|| common.out.clone());
    let mut doc: Option<RunDoc> = None;
    let mut config = if let Some(path) = &common.config {
        RunConfig::from_file(path)?
    } else {
        RunConfig::default()
    };
    if !fresh {
        let dir = input_hint.clone().unwrap_or_else(default_out);
        let path = dir.join(RUN_FILE);
        if path.exists() {
            let d: RunDoc = read_json(&path)?;
            if common.config.is_none() {
                config = d.config.clone();
            }
            doc = Some(d);
        }
    }
    common.apply(&mut config);
    let scene_text = match (&common.scene, &config.scene, doc) {
        (Some(s), _, _) => scene_source(s)?,
        (None, _, Some(d)) => d.scene_text,
        (None, Some(s), None) => scene_source(s)?,
        (None, None, None) => bail!("no scene given: pass --scene PATH or --scene bundled:NAME"),
    };
    let spec = load_scene(&scene_text)?;
    let out = config.out.clone().unwrap_or_else(default_out);
    let input = common.input.clone().unwrap_or_else(|| out.clone());
    Ok(Ctx { config, scene_text, spec, out, input })
}

fn default_out() -> PathBuf {
    std::env::var_os(OUT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

impl Ctx {
    fn noisy(&self) -> bool {
        !self.config.ideal && !self.spec.noise.is_zero()
    }

    fn require_seed(&self, sensing: bool) -> Result<u64> {
        match self.config.seed {
            Some(s) => Ok(s),
            None if sensing || self.noisy() => {
                bail!("a --seed is required when spot noise or the sensor path is enabled")
            }
            None => Ok(0),
        }
    }

    fn spots_path(&self, dir: &Path) -> PathBuf {
        dir.join(if self.config.sensor { SENSED_FILE } else { SPOTS_FILE })
    }

    fn prepare_out(&self) -> Result<()> {
        fs::create_dir_all(&self.out).with_context(|| format!("creating output directory {}", self.out.display()))
    }
}

struct Simulated {
    run_id: String,
    spots: SpotsFile,
    truth: GroundTruth,
}

fn do_simulate(ctx: &Ctx) -> Result<Simulated> {
    let seed = ctx.require_seed(false)?;
    let opts = SimulateOptions {
        noise: if ctx.config.ideal { Default::default() } else { ctx.spec.noise },
        detection_floor: ctx.config.detection_floor.unwrap_or(ctx.spec.detection_floor),
        seed,
    };
    let id = run_id(&ctx.scene_text, &ctx.config);
    let sim = simulate(&ctx.spec.scene, &ctx.spec.lidar, &opts);
    let spots = SpotsFile { schema_version: SCHEMA_VERSION, run_id: id.clone(), exposures: sim.exposures, flash: sim.flash };
    let truth = GroundTruth::new(&ctx.spec.scene, &ctx.spec.lidar, sim.paths, &id);
    // The output location is not part of the run's identity.
    let mut config = ctx.config.clone();
    config.out = None;
    let doc = RunDoc { schema_version: SCHEMA_VERSION, run_id: id.clone(), config, scene_text: ctx.scene_text.clone() };
    write_file(&ctx.out.join(RUN_FILE), to_json(&doc))?;
    write_file(&ctx.out.join(SPOTS_FILE), to_json(&spots))?;
    write_file(&ctx.out.join(TRUTH_FILE), to_json(&truth))?;
    Ok(Simulated { run_id: id, spots, truth })
}

fn do_sense(ctx: &Ctx, ideal: &SpotsFile, cubes: bool) -> Result<SpotsFile> {
    let seed = ctx.require_seed(true)?;
    let params = ctx.config.sensing.params(ctx.spec.timing);
    let cube_dir = ctx.out.join("cubes");
    if cubes {
        fs::create_dir_all(&cube_dir).with_context(|| format!("creating {}", cube_dir.display()))?;
    }
    let mut cube_err = None;
    let sensed = sense(&ideal.exposures, &ideal.flash, &ctx.spec.lidar, &params, seed, |b, cube| {
        if cubes && cube_err.is_none() {
            let path = cube_dir.join(format!("beam_{b:04}.cube"));
            let res = fs::File::create(&path)
                .map_err(anyhow::Error::from)
                .and_then(|f| cube.write_to(BufWriter::new(f)).map_err(anyhow::Error::from));
            cube_err = res.err().map(|e| e.context(format!("writing {}", path.display())));
        }
    });
    if let Some(e) = cube_err {
        return Err(e);
    }
    let out = SpotsFile {
        schema_version: SCHEMA_VERSION,
        run_id: ideal.run_id.clone(),
        exposures: sensed.exposures,
        flash: sensed.flash,
    };
    write_file(&ctx.out.join(SENSED_FILE), to_json(&out))?;
    Ok(out)
}

fn do_reconstruct(ctx: &Ctx, spots: &SpotsFile) -> Result<Reconstruction> {
    let recon = reconstruct(
        ctx.config.mode,
        &spots.exposures,
        &spots.flash,
        &ctx.spec.lidar,
        &ctx.config.recon,
        &spots.run_id,
    );
    with_writer(&ctx.out.join(CSV_FILE), |w| write_points_csv(&recon.points, w))?;
    with_writer(&ctx.out.join(PLY_FILE), |w| write_points_ply(&recon.points, w))?;
    write_file(&ctx.out.join(DIAG_FILE), to_json(&recon.diagnostics))?;
    Ok(recon)
}

fn do_evaluate(ctx: &Ctx, recon: &Reconstruction, spots: &SpotsFile, truth: &GroundTruth) -> Result<Metrics> {
    let metrics = evaluate(recon, spots, truth)?;
    write_file(&ctx.out.join(METRICS_FILE), to_json(&metrics))?;
    Ok(metrics)
}

fn summarize(recon: &Reconstruction) {
    let c = &recon.diagnostics.counts;
    eprintln!(
        "{}: {} points from {} exposures ({} two-bounce only, {} unresolved, {} errors)",
        recon.diagnostics.mode.name(),
        c.points,
        c.exposures,
        c.discarded_2b,
        c.unresolved,
        c.errors
    );
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Scenes => {
            for name in presets::names() {
                println!("{name}");
            }
        }
        Command::Simulate(common) => {
            let ctx = resolve(&common, true)?;
            ctx.prepare_out()?;
            let sim = do_simulate(&ctx)?;
            eprintln!(
                "run {}: {} exposures, {} paths",
                sim.run_id,
                sim.spots.exposures.len(),
                sim.truth.paths.len()
            );
        }
        Command::Sense { common, cubes } => {
            let ctx = resolve(&common, false)?;
            ctx.prepare_out()?;
            let ideal: SpotsFile = read_json(&ctx.input.join(SPOTS_FILE))?;
            let sensed = do_sense(&ctx, &ideal, cubes)?;
            let n: usize = sensed.exposures.iter().map(|e| e.spots.len()).sum();
            eprintln!("sensed {n} spots in {} exposures, {} in the summed flash", sensed.exposures.len(), sensed.flash.len());
        }
        Command::Reconstruct(common) => {
            let ctx = resolve(&common, false)?;
            ctx.prepare_out()?;
            let spots: SpotsFile = read_json(&ctx.spots_path(&ctx.input))?;
            summarize(&do_reconstruct(&ctx, &spots)?);
        }
        Command::Evaluate(common) => {
            let ctx = resolve(&common, false)?;
            ctx.prepare_out()?;
            let diagnostics: Diagnostics = read_json(&ctx.input.join(DIAG_FILE))?;
            let csv = ctx.input.join(CSV_FILE);
            let file = fs::File::open(&csv).with_context(|| format!("opening {}", csv.display()))?;
            let points = read_points_csv(BufReader::new(file)).with_context(|| format!("parsing {}", csv.display()))?;
            let recon = Reconstruction { points, diagnostics };
            let spots: SpotsFile = read_json(&ctx.spots_path(&ctx.input))?;
            let truth: GroundTruth = read_json(&ctx.input.join(TRUTH_FILE))?;
            let m = do_evaluate(&ctx, &recon, &spots, &truth)?;
            eprintln!("classification accuracy {:.4} over {} spots", m.confusion.accuracy(), m.confusion.total);
        }
        Command::Run(common) => {
            let ctx = resolve(&common, true)?;
            ctx.prepare_out()?;
            let sim = do_simulate(&ctx)?;
            let spots = if ctx.config.sensor { do_sense(&ctx, &sim.spots, false)? } else { sim.spots };
            let recon = do_reconstruct(&ctx, &spots)?;
            summarize(&recon);
            let m = do_evaluate(&ctx, &recon, &spots, &sim.truth)?;
            eprintln!("classification accuracy {:.4} over {} spots", m.confusion.accuracy(), m.confusion.total);
        }
    }
    Ok(())
}

fn main() -> std::process::ExitCode {
    match run(Cli::parse()) {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::ExitCode::FAILURE
        }
    }
}
