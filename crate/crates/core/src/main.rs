use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cooprec::config::{Regime, ScenarioConfig};
use cooprec::harness::pipeline::{Exchange, Heads, Pipeline};
use cooprec::harness::report::{ablation_csv, curves_csv, write_metrics};
use cooprec::harness::seeds::{derive_seed, STREAM_SELECT};
use cooprec::harness::train::regime_mode;
use cooprec::harness::{
    ablate, evaluate, loss_curves, metrics_row, predict, run_regime_with, sweep, training_config, Datasets, SweepAxis, TrainedModel,
};
use cooprec::nets::{Arch, Network};
use cooprec::scene::{Scene, BEV_CHANNELS};
use cooprec::tensor::layers::Session;
use cooprec::tensor::{checkpoint, NormMode};
use cooprec::{pgm, Error, Result};

#[derive(Parser)]
#[command(name = "cooprec", version, about = "Cooperative BEV perception experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Scenario overrides, applied in order: defaults, `--config` file, named
/// flags, then `--set` pairs.
#[derive(Args, Clone, Default)]
struct ConfigArgs {
    /// key=value scenario file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Any scenario key, e.g. `--set train_worlds=50`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    n_agents: Option<String>,
    #[arg(long)]
    grid_h: Option<String>,
    #[arg(long)]
    grid_w: Option<String>,
    #[arg(long)]
    meters_per_cell: Option<String>,
    #[arg(long)]
    n_rays: Option<String>,
    #[arg(long)]
    max_range: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// Top-K percentage of cells kept by confidence.
    #[arg(long = "K")]
    k: Option<String>,
    /// Random-sampling percentage among the top-K cells.
    #[arg(long = "R")]
    r: Option<String>,
    #[arg(long)]
    lambda: Option<String>,
    #[arg(long)]
    c_compressed: Option<String>,
    #[arg(long)]
    l_kernel: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    /// none, early, late or core.
    #[arg(long)]
    regime: Option<String>,
    /// seg, det or both.
    #[arg(long)]
    task: Option<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ScenarioConfig> {
        let mut cfg = match &self.config {
            Some(p) => ScenarioConfig::parse_text(&fs::read_to_string(p)?)?,
            None => ScenarioConfig::default(),
        };
        let named = [
            ("n_agents", &self.n_agents),
            ("grid_h", &self.grid_h),
            ("grid_w", &self.grid_w),
            ("meters_per_cell", &self.meters_per_cell),
            ("n_rays", &self.n_rays),
            ("max_range", &self.max_range),
            ("seed", &self.seed),
            ("K", &self.k),
            ("R", &self.r),
            ("lambda", &self.lambda),
            ("C_compressed", &self.c_compressed),
            ("l_kernel", &self.l_kernel),
            ("lr", &self.lr),
            ("epochs", &self.epochs),
            ("regime", &self.regime),
            ("task", &self.task),
        ];
        for (k, v) in named {
            if let Some(v) = v {
                cfg.set(k, v)?;
            }
        }
        for kv in &self.set {
            let (k, v) = kv.split_once('=').ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
            cfg.set(k.trim(), v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train one model per training seed, evaluate, write metrics and checkpoints.
    Train {
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Evaluate a checkpoint on the eval seeds.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Training seed recorded in the output rows.
        #[arg(long, default_value_t = 0)]
        train_seed: u64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Write segmentation and reconstruction graymaps for the first N worlds.
        #[arg(long, default_value_t = 0)]
        images: usize,
        /// Directory receiving every received message as raw wire bytes.
        #[arg(long)]
        wire_dump: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Sweep one axis (ratio, K, R or lambda) over comma-separated values.
    Sweep {
        #[arg(long)]
        axis: String,
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
        /// Retrain for every value instead of re-evaluating one model.
        #[arg(long)]
        retrain: bool,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Base, +collaboration and +collaboration+reconstruction variants.
    Ablate {
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Per-step task and reconstruction losses for lambda 0 and 1.
    Curves {
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Graymaps of one world's raw and supervisory rasters and labels.
    DumpScene {
        #[arg(long, default_value_t = 0)]
        world_seed: u64,
        #[arg(long, default_value = "scene")]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Graymaps of the need, offer and attention maps for every agent pair.
    DumpAttention {
        /// Model to inspect; trained from the first training seed when absent.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        world_seed: u64,
        #[arg(long, default_value = "attention")]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

fn load_network(cfg: &ScenarioConfig, path: &Path) -> Result<Network> {
    let mut net = Network::new(Arch::from_config(cfg), 0)?;
    checkpoint::load_file(&mut net.store, path)?;
    Ok(net)
}

fn cmd_train(cfg: &ScenarioConfig, out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    fs::write(out.join("config.txt"), cfg.to_text())?;
    let data = Datasets::build(cfg)?;
    let rows = run_regime_with(cfg, &data, |m| {
        let path = out.join(format!("{}_seed{}.ckpt", cfg.regime, m.train_seed));
        checkpoint::save(&m.net.store, &path)?;
        eprintln!("trained {} seed {} -> {}", cfg.regime, m.train_seed, path.display());
        Ok(())
    })?;
    write_metrics(out, &rows)?;
    for r in &rows {
        eprintln!("{} train_seed={} eval_seed={} vehicle_iou={:.2}", r.regime, r.train_seed, r.eval_seed, r.vehicle_iou);
    }
    Ok(())
}

fn cmd_eval(cfg: &ScenarioConfig, ckpt: &Path, train_seed: u64, out: &Path, images: usize, wire_dump: Option<&Path>) -> Result<()> {
    let net = load_network(cfg, ckpt)?;
    let model = TrainedModel { net, regime: cfg.regime, train_seed, lambda: cfg.lambda, curve: Vec::new() };
    fs::create_dir_all(out)?;
    if let Some(dir) = wire_dump {
        fs::create_dir_all(dir)?;
    }
    let grid = cooprec::scene::grid_spec(cfg);
    let mut rows = Vec::new();
    let mut predictions = String::from("eval_seed,frame_id,agent_id,intersection,union,vehicle_iou,detections\n");
    for &eval_seed in &cfg.eval_seeds {
        let scenes = cooprec::harness::eval_scenes(cfg, eval_seed)?;
        let start = std::time::Instant::now();
        let tally = evaluate(&model.net, cfg, cfg.regime, &scenes, eval_seed)?;
        rows.push(metrics_row(cfg, &model, eval_seed, &tally, start.elapsed().as_secs_f64()));
        for (w, scene) in scenes.iter().enumerate() {
            let exchange_seed = derive_seed(eval_seed, STREAM_SELECT, w as u64);
            for ego in 0..scene.n_agents() {
                let pred = predict(&model.net, cfg, cfg.regime, scene, ego, exchange_seed)?;
                let mut counts = cooprec::nets::SegCounts::default();
                counts.add(&pred.labels, &scene.truth[ego].labels);
                writeln!(
                    predictions,
                    "{eval_seed},{w},{ego},{},{},{},{}",
                    counts.intersection,
                    counts.union,
                    counts.iou_percent(),
                    pred.detections.len()
                )
                .unwrap();
                if let Some(dir) = wire_dump {
                    for m in &pred.messages {
                        fs::write(dir.join(format!("e{eval_seed}_w{w}_to{ego}_from{}.bin", m.agent_id)), m.to_bytes()?)?;
                    }
                }
                if w < images {
                    let stem = format!("e{eval_seed}_w{w}_a{ego}");
                    let labels: Vec<f64> = pred.labels.iter().map(|&l| l as f64).collect();
                    pgm::write(&out.join(format!("{stem}_seg.pgm")), grid.h, grid.w, &labels)?;
                    let truth: Vec<f64> = scene.truth[ego].labels.iter().map(|&l| l as f64).collect();
                    pgm::write(&out.join(format!("{stem}_truth.pgm")), grid.h, grid.w, &truth)?;
                    if cfg.regime != Regime::Late {
                        write_reconstruction(cfg, &model.net, scene, ego, exchange_seed, &out.join(&stem))?;
                    }
                }
            }
        }
    }
    fs::write(out.join("predictions.csv"), predictions)?;
    write_metrics(out, &rows)
}

fn write_reconstruction(cfg: &ScenarioConfig, net: &Network, scene: &Scene, ego: usize, seed: u64, stem: &Path) -> Result<()> {
    let (input, collaborate) = regime_mode(cfg.regime);
    let pipe = Pipeline { layers: &net.layers, arch: &net.arch, cfg };
    let mut s = Session::new(&net.store, NormMode::Eval);
    let heads = Heads { seg: false, det: false, rec: true };
    let out = pipe.forward(&mut s, scene, ego, input, collaborate, Exchange::Wire { seed }, heads)?;
    let rec = s.value(out.rec.expect("reconstruction head requested"));
    let (h, w, c) = rec.dims3()?;
    for ch in 0..c {
        let v: Vec<f64> = rec.data().iter().skip(ch).step_by(c).copied().collect();
        pgm::write(&stem.with_file_name(format!("{}_rec_c{ch}.pgm", stem.file_name().unwrap().to_string_lossy())), h, w, &v)?;
    }
    Ok(())
}

fn cmd_dump_scene(cfg: &ScenarioConfig, world_seed: u64, out: &Path) -> Result<()> {
    let scene = Scene::build(cfg, world_seed)?;
    fs::create_dir_all(out)?;
    fs::write(out.join("config.txt"), cfg.to_text())?;
    let (h, w) = (cfg.grid_h, cfg.grid_w);
    for a in 0..scene.n_agents() {
        for ch in 0..BEV_CHANNELS {
            pgm::write(&out.join(format!("agent{a}_raw_c{ch}.pgm")), h, w, &scene.raw[a].channel(ch))?;
            pgm::write(&out.join(format!("agent{a}_sup_c{ch}.pgm")), h, w, &scene.supervisory[a].channel(ch))?;
        }
        let labels: Vec<f64> = scene.truth[a].labels.iter().map(|&l| l as f64).collect();
        pgm::write(&out.join(format!("agent{a}_labels.pgm")), h, w, &labels)?;
    }
    eprintln!("wrote {} agents to {}", scene.n_agents(), out.display());
    Ok(())
}

fn cmd_dump_attention(cfg: &ScenarioConfig, ckpt: Option<&Path>, world_seed: u64, out: &Path) -> Result<()> {
    let net = match ckpt {
        Some(p) => load_network(cfg, p)?,
        None => {
            let seed = *cfg.train_seeds.first().ok_or_else(|| Error::Config("no training seed".into()))?;
            let c = ScenarioConfig { regime: Regime::Core, ..training_config(cfg) };
            cooprec::harness::train(&c, &cooprec::harness::train_scenes(&c)?, seed)?.net
        }
    };
    let scene = Scene::build(cfg, world_seed)?;
    let pipe = Pipeline { layers: &net.layers, arch: &net.arch, cfg };
    let heads = Heads { seg: false, det: false, rec: false };
    fs::create_dir_all(out)?;
    let fgrid = net.arch.feature_grid();
    for ego in 0..scene.n_agents() {
        let mut s = Session::new(&net.store, NormMode::Eval);
        let o = pipe.forward(&mut s, &scene, ego, regime_mode(Regime::Core).0, true, Exchange::Wire { seed: world_seed }, heads)?;
        if let Some(r) = o.need {
            pgm::write(&out.join(format!("ego{ego}_R.pgm")), fgrid.h, fgrid.w, s.value(r).data())?;
        }
        for a in &o.attention {
            pgm::write(&out.join(format!("ego{ego}_from{}_P.pgm", a.sender)), fgrid.h, fgrid.w, s.value(a.offer).data())?;
            pgm::write(&out.join(format!("ego{ego}_from{}_M.pgm", a.sender)), fgrid.h, fgrid.w, s.value(a.mask).data())?;
        }
    }
    eprintln!("wrote attention maps to {}", out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { out, cfg } => cmd_train(&cfg.resolve()?, &out),
        Command::Eval { checkpoint, train_seed, out, images, wire_dump, cfg } => {
            cmd_eval(&cfg.resolve()?, &checkpoint, train_seed, &out, images, wire_dump.as_deref())
        }
        Command::Sweep { axis, values, retrain, out, cfg } => {
            let rows = sweep(&cfg.resolve()?, axis.parse::<SweepAxis>()?, &values, retrain)?;
            write_metrics(&out, &rows)
        }
        Command::Ablate { out, cfg } => {
            let rows = ablate(&cfg.resolve()?)?;
            let all: Vec<_> = rows.iter().flat_map(|r| r.rows.iter().cloned()).collect();
            write_metrics(&out, &all)?;
            fs::write(out.join("ablation.csv"), ablation_csv(&rows))?;
            for r in &rows {
                eprintln!("{:<14} mean vehicle IoU {:.2}", r.name, r.mean_iou);
            }
            Ok(())
        }
        Command::Curves { out, cfg } => {
            let rows = loss_curves(&cfg.resolve()?)?;
            fs::create_dir_all(&out)?;
            fs::write(out.join("curves.csv"), curves_csv(&rows))?;
            Ok(())
        }
        Command::DumpScene { world_seed, out, cfg } => cmd_dump_scene(&cfg.resolve()?, world_seed, &out),
        Command::DumpAttention { checkpoint, world_seed, out, cfg } => {
            cmd_dump_attention(&cfg.resolve()?, checkpoint.as_deref(), world_seed, &out)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ Error::Invariant(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
        Err(e @ Error::Config(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
