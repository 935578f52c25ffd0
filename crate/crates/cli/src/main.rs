//! Command-line surface for the pedestrian prediction pipeline.
//!
//! Subcommands: `train` fits model parameters from a track table, `predict`
//! forecasts one pedestrian, `evaluate` scores predictors over a dataset,
//! `synthesize` generates labeled data from the generative model, and
//! `bench` times prediction. Exit codes: 0 success, 1 usage error, 2 bad or
//! insufficient data, 3 numerical failure.

use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use osp_core::error::{Error, Result};
use osp_core::inference::{predict, PredictionRequest, PredictionSet, VehicleFutures};
use osp_core::io::{
    example_params, load_model, load_tracks, report_digest, resample, save_model, synthesize,
    ModelFile, ScenarioSpec, SchemaPreset, TrainingProvenance, TARGET_HZ,
};
use osp_core::metrics::{bench, evaluate, EvalProtocol, Predictor};
use osp_core::scene::{Dataset, SceneConfig, VehicleTrack};
use osp_core::training::{fit, TrainingConfig};

/// Default seed used by every command so runs are reproducible without flags.
const DEFAULT_SEED: u64 = 42;

/// Untimed runs before benchmark measurement starts.
const BENCH_WARMUP: usize = 3;

#[derive(Parser)]
#[command(
    name = "osp",
    version,
    about = "Pedestrian trajectory prediction around vehicles"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit model parameters from a recorded track table.
    Train(TrainArgs),
    /// Forecast one pedestrian from an observation window.
    Predict(PredictArgs),
    /// Score predictors with per-second error tables over a dataset.
    Evaluate(EvaluateArgs),
    /// Generate a labeled synthetic dataset from the generative model.
    Synthesize(SynthesizeArgs),
    /// Time prediction end-to-end on a fixed scenario.
    Bench(BenchArgs),
}

/// Flags shared by every command that reads a track table.
#[derive(Args)]
struct InputArgs {
    /// Track table to read.
    #[arg(long)]
    data: PathBuf,
    /// Column layout of the table: generic, ind, or dut.
    #[arg(long, default_value = "generic")]
    schema: String,
    /// Native frame rate of the table in Hz, when the schema has no default
    /// (dut) or the file deviates from the preset's.
    #[arg(long)]
    native_hz: Option<f64>,
}

impl InputArgs {
    fn load(&self) -> Result<Dataset> {
        let schema = SchemaPreset::parse(&self.schema)?;
        let table = load_tracks(&self.data, schema, self.native_hz)?;
        resample(&table, TARGET_HZ)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Where to write the fitted model.
    #[arg(long)]
    out: PathBuf,
    /// Where to write the fit report (default: the model path with a
    /// `report.json` extension).
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Independent label initializations; the best final loss wins.
    #[arg(long, default_value_t = 5)]
    restarts: usize,
}

#[derive(Args)]
struct PredictArgs {
    /// Fitted model file.
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    input: InputArgs,
    /// Pedestrian track id to forecast (optional when the scene has exactly
    /// one pedestrian).
    #[arg(long)]
    ped: Option<String>,
    /// Observation window, seconds (taken from the end of the track).
    #[arg(long, default_value_t = 3.0)]
    obs_seconds: f64,
    /// Forecast length, seconds.
    #[arg(long, default_value_t = 5.0)]
    horizon_seconds: f64,
    /// Sampled futures per forecast.
    #[arg(long, default_value_t = 100)]
    samples: usize,
    /// Planned vehicle trajectories replacing constant-velocity
    /// extrapolation (same schema flags as --data; must cover the horizon).
    #[arg(long)]
    av_trajectory: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Where to write the forecast table.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Fitted model file; without it only the constant-velocity baseline runs.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Comma-separated predictors: cv, osp, osp-av.
    #[arg(long)]
    predictors: Option<String>,
    #[arg(long, default_value_t = 3.0)]
    obs_seconds: f64,
    #[arg(long, default_value_t = 5.0)]
    horizon_seconds: f64,
    #[arg(long, default_value_t = 100)]
    samples: usize,
    /// Distance between consecutive evaluation windows, seconds.
    #[arg(long, default_value_t = 1.0)]
    stride_seconds: f64,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Directory for the metric tables (one CSV per predictor plus a
    /// combined JSON file).
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct SynthesizeArgs {
    /// Scenario description (JSON); a built-in single-vehicle crossing is
    /// used when omitted.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Model parameters to simulate; a built-in demonstration ground truth
    /// is used when omitted.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Number of episodes to generate.
    #[arg(long, short = 'n', default_value_t = 100)]
    episodes: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Directory for `tracks.csv` and `latents.json`.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    /// Model parameters to time; the built-in demonstration parameters are
    /// used when omitted.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Timed repetitions.
    #[arg(long, default_value_t = 100)]
    reps: usize,
    #[arg(long, default_value_t = 100)]
    samples: usize,
    #[arg(long, default_value_t = 5.0)]
    horizon_seconds: f64,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Optional JSON timing report.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            if matches!(
                err.kind(),
                ErrorKind::DisplayHelp
                    | ErrorKind::DisplayVersion
                    | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand
            ) {
                let _ = err.print();
                std::process::exit(0);
            }
            let _ = err.print();
            std::process::exit(1);
        }
    };
    let outcome = match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Synthesize(args) => cmd_synthesize(args),
        Command::Bench(args) => cmd_bench(args),
    };
    if let Err(err) = outcome {
        match err {
            Error::EmptyDataset | Error::TrainingInfeasible => {
                eprintln!("error: training-infeasible: {err}")
            }
            ref err => eprintln!("error: {err}"),
        }
        std::process::exit(if err.is_data_error() { 2 } else { 3 });
    }
}

fn seconds_to_steps(seconds: f64, what: &'static str) -> Result<usize> {
    let steps = (seconds * TARGET_HZ).round();
    if !(steps.is_finite() && steps >= 1.0) {
        return Err(Error::Invalid {
            what,
            msg: format!("{seconds} s is shorter than one 0.1 s timestep"),
        });
    }
    Ok(steps as usize)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Invalid {
            what: "json output",
            msg: e.to_string(),
        })?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let dataset = args.input.load()?;
    let cfg = TrainingConfig {
        seed: args.seed,
        n_restarts: args.restarts,
        ..TrainingConfig::default()
    };
    let (params, report) = fit(&dataset, &cfg)?;
    let provenance = TrainingProvenance {
        dataset: args.data_name(),
        seed: args.seed,
        report_digest: report_digest(&report)?,
    };
    save_model(&args.out, &ModelFile::new(params, Some(provenance)))?;
    let report_path = args
        .report
        .unwrap_or_else(|| args.out.with_extension("report.json"));
    write_json(&report_path, &report)?;
    let best = &report.restarts[report.best_restart];
    println!(
        "final loss: {} after {} iterations (restart {} of {}, {} records)",
        report.final_loss,
        best.iterations,
        report.best_restart,
        report.restarts.len(),
        report.n_records
    );
    println!("model written to {}", args.out.display());
    Ok(())
}

impl TrainArgs {
    fn data_name(&self) -> String {
        self.input.data.display().to_string()
    }
}

/// Renders a forecast as delimiter-separated text: one row per sample and
/// step, then the weighted mean track under the pseudo-sample id `mean`.
fn prediction_csv(set: &PredictionSet) -> String {
    let mut out = String::from("sample,step,x_m,y_m,weight\n");
    for (i, sample) in set.samples.iter().enumerate() {
        for (j, pos) in sample.positions.iter().enumerate() {
            out.push_str(&format!(
                "{i},{},{},{},{}\n",
                j + 1,
                pos.x,
                pos.y,
                sample.weight
            ));
        }
    }
    for (j, pos) in set.mean_track.iter().enumerate() {
        out.push_str(&format!("mean,{},{},{},1\n", j + 1, pos.x, pos.y));
    }
    out
}

fn cmd_predict(args: PredictArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let dataset = args.input.load()?;
    let obs_steps = seconds_to_steps(args.obs_seconds, "observation window")?;
    let horizon = seconds_to_steps(args.horizon_seconds, "horizon")?;

    let track = match &args.ped {
        Some(id) => dataset
            .pedestrians
            .iter()
            .find(|t| &t.id == id)
            .ok_or_else(|| Error::Invalid {
                what: "pedestrian selection",
                msg: format!("no pedestrian track named `{id}`"),
            })?,
        None => match dataset.pedestrians.as_slice() {
            [only] => only,
            [] => return Err(Error::EmptyDataset),
            many => {
                return Err(Error::Invalid {
                    what: "pedestrian selection",
                    msg: format!(
                        "scene has {} pedestrians; pick one with --ped",
                        many.len()
                    ),
                })
            }
        },
    };
    if track.len() < obs_steps {
        return Err(Error::WindowTooShort {
            len: track.len(),
            min: obs_steps,
        });
    }
    let observations = track.observations[track.len() - obs_steps..].to_vec();
    let t_end = observations.last().expect("window is nonempty").t;
    let vehicles: Vec<VehicleTrack> = dataset
        .vehicles
        .iter()
        .filter_map(|v| v.history_until(t_end))
        .collect();

    let mode = match &args.av_trajectory {
        None => VehicleFutures::Extrapolate,
        Some(path) => {
            let schema = SchemaPreset::parse(&args.input.schema)?;
            let plan_table = load_tracks(path, schema, args.input.native_hz)?;
            let plan = resample(&plan_table, TARGET_HZ)?;
            if plan.vehicles.is_empty() {
                return Err(Error::Invalid {
                    what: "planned trajectory",
                    msg: "file contains no vehicle rows".into(),
                });
            }
            VehicleFutures::Known(plan.vehicles)
        }
    };

    let request = PredictionRequest {
        observations,
        vehicles,
        horizon,
        n_samples: args.samples,
        mode,
        seed: args.seed,
    };
    let set = predict(&request, &model.params)?;
    std::fs::write(&args.out, prediction_csv(&set))?;
    println!(
        "wrote {} samples x {} steps for `{}` to {}",
        set.samples.len(),
        horizon,
        track.id,
        args.out.display()
    );
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let dataset = args.input.load()?;
    let model: Option<ModelFile> = match &args.model {
        Some(path) => Some(load_model(path)?),
        None => None,
    };
    let requested: Vec<String> = match &args.predictors {
        Some(list) => list.split(',').map(|s| s.trim().to_string()).collect(),
        None => match model {
            Some(_) => vec!["cv".into(), "osp".into(), "osp-av".into()],
            None => vec!["cv".into()],
        },
    };
    let protocol = EvalProtocol {
        obs_steps: seconds_to_steps(args.obs_seconds, "observation window")?,
        horizon_steps: seconds_to_steps(args.horizon_seconds, "horizon")?,
        n_samples: args.samples,
        stride_steps: seconds_to_steps(args.stride_seconds, "stride")?,
        ..EvalProtocol::default()
    };
    std::fs::create_dir_all(&args.out_dir)?;

    let mut combined = serde_json::Map::new();
    for name in &requested {
        let predictor = match name.as_str() {
            "cv" => Predictor::ConstantVelocity,
            "osp" => Predictor::Osp(&model.as_ref().ok_or(Error::Invalid {
                what: "evaluation",
                msg: "predictor `osp` needs --model".into(),
            })?.params),
            "osp-av" => Predictor::OspKnownVehicles(&model.as_ref().ok_or(Error::Invalid {
                what: "evaluation",
                msg: "predictor `osp-av` needs --model".into(),
            })?.params),
            other => {
                return Err(Error::Invalid {
                    what: "evaluation",
                    msg: format!("unknown predictor `{other}` (expected cv, osp, or osp-av)"),
                })
            }
        };
        let table = evaluate(&dataset, predictor, &protocol, args.seed)?;
        let csv_path = args.out_dir.join(format!("metrics-{name}.csv"));
        std::fs::write(&csv_path, table.to_csv())?;
        println!("{name}:");
        print!("{}", table.to_csv());
        combined.insert(
            name.clone(),
            serde_json::to_value(&table).map_err(|e| Error::Invalid {
                what: "json output",
                msg: e.to_string(),
            })?,
        );
    }
    write_json(&args.out_dir.join("metrics.json"), &combined)?;
    Ok(())
}

/// Renders a synthesized dataset in the canonical track-table layout.
/// Pedestrian rows leave the velocity columns empty; vehicle rows fill them.
fn tracks_csv(dataset: &Dataset) -> String {
    let mut out = String::from("track_id,class,frame,x_m,y_m,vx_mps,vy_mps\n");
    for track in &dataset.pedestrians {
        for obs in &track.observations {
            out.push_str(&format!(
                "{},pedestrian,{},{},{},,\n",
                track.id, obs.t, obs.pos_hat.x, obs.pos_hat.y
            ));
        }
    }
    for track in &dataset.vehicles {
        for (k, state) in track.states.iter().enumerate() {
            out.push_str(&format!(
                "{},vehicle,{},{},{},{},{}\n",
                track.id,
                track.start_t + k as i64,
                state.pos.x,
                state.pos.y,
                state.vel.x,
                state.vel.y
            ));
        }
    }
    out
}

fn cmd_synthesize(args: SynthesizeArgs) -> Result<()> {
    let spec: ScenarioSpec = match &args.scenario {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            serde_json::from_str(&text).map_err(|e| Error::Invalid {
                what: "scenario file",
                msg: e.to_string(),
            })?
        }
        None => ScenarioSpec::crossing_demo(),
    };
    let params = match &args.model {
        Some(path) => load_model(path)?.params,
        None => example_params(SceneConfig::default()),
    };
    let out = synthesize(&spec, &params, args.episodes, args.seed)?;
    std::fs::create_dir_all(&args.out_dir)?;
    std::fs::write(args.out_dir.join("tracks.csv"), tracks_csv(&out.dataset))?;
    write_json(&args.out_dir.join("latents.json"), &out.latents)?;
    save_model(
        &args.out_dir.join("model-true.json"),
        &ModelFile::new(params, None),
    )?;
    println!(
        "wrote {} pedestrian tracks and {} vehicle tracks to {}",
        out.dataset.pedestrians.len(),
        out.dataset.vehicles.len(),
        args.out_dir.display()
    );
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> Result<()> {
    let params = match &args.model {
        Some(path) => load_model(path)?.params,
        None => example_params(SceneConfig::default()),
    };
    let horizon = seconds_to_steps(args.horizon_seconds, "horizon")?;
    // One synthesized crossing provides the observation window and a vehicle
    // history; everything is in memory before timing starts.
    let scenario = ScenarioSpec::crossing_demo();
    let episode = synthesize(&scenario, &params, 1, args.seed)?;
    let track = &episode.dataset.pedestrians[0];
    let obs_steps = 30.min(track.len());
    let observations = track.observations[track.len() - obs_steps..].to_vec();
    let t_end = observations.last().expect("window is nonempty").t;
    let vehicles: Vec<VehicleTrack> = episode
        .dataset
        .vehicles
        .iter()
        .filter_map(|v| v.history_until(t_end))
        .collect();
    let request = PredictionRequest {
        observations,
        vehicles,
        horizon,
        n_samples: args.samples,
        mode: VehicleFutures::Extrapolate,
        seed: args.seed,
    };
    let report = bench(
        || predict(&request, &params).map(|_| ()),
        args.reps,
        BENCH_WARMUP,
    )?;
    println!(
        "predict: mean {:.3} ms, p95 {:.3} ms over {} repetitions ({} samples, {} steps)",
        report.mean_ms, report.p95_ms, report.reps, args.samples, horizon
    );
    if let Some(path) = &args.out {
        write_json(path, &report)?;
    }
    Ok(())
}
