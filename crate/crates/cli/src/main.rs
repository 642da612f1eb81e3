use clap::{Parser, Subcommand};
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use d2jscc::harness::plot::{plot_quality, varying_axis};
use d2jscc::harness::sweep::{run_sweep, write_sweep_csv};
use d2jscc::harness::{
    build_source, build_table, build_trainer, fitbeta_file, load_or_build_table, retrain_at, select, simulate_once,
    solution_record, write_solutions, ExperimentConfig, HarnessError,
};
use d2jscc::ratecontrol::fmt_float;

#[derive(Parser, Debug)]
#[command(name = "d2jscc", version, about = "Rate control simulator for digital deep joint source-channel coding")]
struct Cli {
    /// TOML experiment config; defaults are used for anything missing.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides output.dir).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Master seed (overrides seed).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 0 lets rayon decide.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Train and calibrate the look-up table and write table.csv.
    Table,
    /// Pick a model and channel rate at the configured SNR.
    Select,
    /// Retrain around the selected model.
    Retrain,
    /// Monte Carlo transmission of the selected model.
    Simulate,
    /// Sweep SNR, block length and bandwidth ratio; writes sweep.csv and a plot.
    Sweep,
    /// Fit the block-error model to a BLER file.
    Fitbeta {
        /// CSV with rate_bits_per_symbol,bler columns (defaults to channel.bler_file).
        #[arg(long)]
        bler: Option<PathBuf>,
    },
    /// Print the effective config as TOML.
    Config,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.output.dir = o.clone();
    }
    Ok(cfg)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, HarnessError> {
    fs::create_dir_all(dir)?;
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn run(cli: &Cli) -> Result<(), HarnessError> {
    let cfg = load_config(cli)?;
    let out = cfg.output.dir.clone();
    match &cli.cmd {
        Cmd::Config => print!("{}", cfg.to_toml()),
        Cmd::Fitbeta { bler } => {
            let path = bler
                .clone()
                .or_else(|| cfg.channel.bler_file.clone())
                .ok_or_else(|| HarnessError::Config("no BLER file given".into()))?;
            let (b1, b2) = fitbeta_file(&path)?;
            let mut w = csv::Writer::from_writer(create(&out, "fitbeta.csv")?);
            w.write_record(["beta1", "beta2"])?;
            w.write_record([fmt_float(b1), fmt_float(b2)])?;
            w.flush()?;
            println!("beta1 = {}, beta2 = {}", fmt_float(b1), fmt_float(b2));
        }
        cmd => {
            let source = build_source(&cfg)?;
            let trainer = build_trainer(&cfg, &source)?;
            if matches!(cmd, Cmd::Table) {
                let table = build_table(&cfg, &trainer)?;
                let path = cfg.table.path.clone().unwrap_or_else(|| out.join("table.csv"));
                if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                    fs::create_dir_all(dir)?;
                }
                table.write_csv(BufWriter::new(File::create(&path)?))?;
                eprintln!("wrote {} models to {}", table.len(), path.display());
                return Ok(());
            }
            let table = load_or_build_table(&cfg, &trainer)?;
            let spec = cfg.channel_spec()?;
            let (snr_db, m) = (cfg.channel.snr_db, cfg.source.m);
            match cmd {
                Cmd::Select => {
                    let s = select(&cfg, &table, &spec);
                    write_solutions(create(&out, "select.csv")?, &[solution_record("alg1", snr_db, &spec, m, &s)])?;
                    write_solutions(std::io::stdout(), &[solution_record("alg1", snr_db, &spec, m, &s)])?;
                }
                Cmd::Retrain => {
                    let (init, res) = retrain_at(&cfg, &table, &trainer, &spec)?;
                    let mut rows = vec![solution_record("alg1", snr_db, &spec, m, &init)];
                    for (i, st) in res.steps.iter().enumerate() {
                        rows.push(solution_record(&format!("step{i}"), snr_db, &spec, m, &st.solution));
                    }
                    rows.push(solution_record("alg2", snr_db, &spec, m, &res.solution));
                    write_solutions(create(&out, "retrain.csv")?, &rows)?;
                    write_solutions(std::io::stdout(), &rows[rows.len() - 1..])?;
                    eprintln!("{} iterations (bound {})", res.iterations(), res.iteration_bound());
                }
                Cmd::Simulate => {
                    let s = select(&cfg, &table, &spec);
                    if !s.feasible {
                        return Err(HarnessError::Config(format!("no feasible model at {snr_db} dB")));
                    }
                    let r = simulate_once(&cfg, &source, &s, &spec, cfg.seed)?;
                    let mut w = csv::Writer::from_writer(create(&out, "simulate.csv")?);
                    w.write_record(["model_id", "D_hat_t", "simulated_mse", "clean_mse", "empirical_per", "packets"])?;
                    w.write_record([
                        s.entry.model_id.to_string(),
                        fmt_float(s.breakdown.d_hat_t),
                        fmt_float(r.mse),
                        fmt_float(r.clean_mse),
                        fmt_float(r.per),
                        r.packets.to_string(),
                    ])?;
                    w.flush()?;
                    println!(
                        "predicted {} simulated {} per {}",
                        fmt_float(s.breakdown.d_hat_t),
                        fmt_float(r.mse),
                        fmt_float(r.per)
                    );
                }
                Cmd::Sweep => {
                    let rows = run_sweep(&cfg, &source, &table, &trainer)?;
                    write_sweep_csv(create(&out, "sweep.csv")?, &rows)?;
                    if cfg.output.plots {
                        plot_quality(&rows, varying_axis(&rows), &out.join("sweep.svg"))?;
                    }
                    eprintln!("wrote {} rows to {}", rows.len(), out.join("sweep.csv").display());
                }
                Cmd::Table | Cmd::Fitbeta { .. } | Cmd::Config => unreachable!(),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 1 })
        }
    }
}
