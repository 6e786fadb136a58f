use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use roughnls::analysis::{energy, mass};
use roughnls::harness::{
    load_spec, parse_spec, preset, results_stem, run_experiment, write_results, Fits, ResultRecord, PRESETS,
};
use roughnls::integrators::{Observation, Observer};
use roughnls::{evolve, Error, ExperimentKind, ExperimentSpec, Overrides, SchemeId};

#[derive(Parser)]
#[command(name = "roughnls", version, about = "Cubic NLS with rough potentials on the torus")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Single run; writes the final coefficients and mass/energy history.
    Simulate(Common),
    /// Fourier decay of the LRI solution.
    Regularity(Common),
    /// Temporal convergence sweep with a self reference.
    Converge(Common),
    /// All schemes against one common reference.
    Compare(Common),
    /// Norm inflation of the second Picard iterate.
    Illposed(Common),
    /// Runs a built-in experiment.
    Preset {
        /// One of the built-in names; `list` prints them.
        name: String,
        #[command(flatten)]
        common: Common,
    },
    /// Writes the potential of a spec as a `k,re,im` table.
    ExportPotential(Common),
}

#[derive(Args, Clone, Debug, Default)]
struct Common {
    /// Number of grid points (Fourier modes).
    #[arg(long)]
    grid: Option<usize>,
    /// Time step. For sweeps, the largest step.
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long = "t-final")]
    t_final: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    /// Seed of the potential; the initial data use seed + 1.
    #[arg(long)]
    seed: Option<u64>,
    /// lri, lie, ewi, bronsard or fd. Repeat or separate with commas.
    #[arg(long, value_delimiter = ',')]
    scheme: Vec<SchemeId>,
    /// Output directory [default: the spec's `output`, else `.`].
    #[arg(long)]
    out: Option<PathBuf>,
    /// TOML experiment spec.
    #[arg(long)]
    spec: Option<PathBuf>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            grid_size: self.grid,
            tau: self.tau,
            t_final: self.t_final,
            lambda: self.lambda,
            seed: self.seed,
            schemes: (!self.scheme.is_empty()).then(|| self.scheme.clone()),
        }
    }

    fn out_dir(&self, spec: &ExperimentSpec) -> PathBuf {
        self.out
            .clone()
            .or_else(|| spec.output.as_ref().map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("."))
    }

    /// Spec file or the defaults of `kind`, with flags applied.
    fn resolve(&self, kind: ExperimentKind) -> roughnls::Result<ExperimentSpec> {
        let spec = match &self.spec {
            Some(path) => {
                let spec = load_spec(path)?;
                if spec.kind != kind {
                    return Err(Error::Validation {
                        field: "kind".into(),
                        message: format!("spec is {:?}, command expects {kind:?}", spec.kind),
                    });
                }
                spec
            }
            None => parse_spec(&default_spec_text(kind))?,
        };
        spec.with_overrides(&self.overrides())
    }

    fn resolve_any(&self) -> roughnls::Result<ExperimentSpec> {
        let spec = match &self.spec {
            Some(path) => load_spec(path)?,
            None => parse_spec(&default_spec_text(ExperimentKind::Regularity))?,
        };
        spec.with_overrides(&self.overrides())
    }
}

fn default_spec_text(kind: ExperimentKind) -> String {
    match kind {
        ExperimentKind::Regularity => "kind = \"REGULARITY\"\n".into(),
        ExperimentKind::Convergence => "kind = \"CONVERGENCE\"\n".into(),
        ExperimentKind::Comparison => "kind = \"COMPARISON\"\n".into(),
        ExperimentKind::Illposed => "kind = \"ILLPOSED\"\n[illposed]\nfamily = \"THM3_PINF\"\n".into(),
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::BlowUp { .. } => 3,
        Error::Io(_) => 1,
        _ => 2,
    }
}

fn summarize(record: &ResultRecord, dir: &Path) {
    let stem = results_stem(record.spec.kind);
    println!("{} ({:?})", record.spec.name, record.spec.kind);
    let Fits {
        decay,
        convergence,
        growth,
    } = &record.fits;
    if let Some(d) = decay {
        println!(
            "  decay exponent {:.4} over k in [{}, {}]",
            d.fitted_exponent, d.k_window[0], d.k_window[1]
        );
    }
    for (scheme, fit) in convergence {
        println!("  {scheme}: order {:.4}", fit.order);
    }
    if let Some(g) = growth {
        println!(
            "  slope {:.4e} vs {} (correlation {:.6})",
            g.slope, g.regressor, g.correlation
        );
    }
    println!("  wrote {}", dir.join(format!("{stem}.csv")).display());
}

fn run_spec(spec: &ExperimentSpec, common: &Common) -> roughnls::Result<()> {
    let record = run_experiment(spec)?;
    let dir = common.out_dir(spec);
    write_results(&record, &dir)?;
    summarize(&record, &dir);
    Ok(())
}

fn simulate(common: &Common) -> roughnls::Result<()> {
    let spec = common.resolve_any()?;
    let scheme = spec.schemes[0];
    let grid = spec.grid()?;
    let xi = spec.build_potential(&grid)?;
    let u0 = spec.build_initial(&grid)?;
    let cfg = spec.stepper_config(spec.tau)?;
    let steps = roughnls::integrators::step_count(spec.t_final, spec.tau)?;
    let stride = (steps / 100).max(1);
    let observers = [Observer::Mass { stride }, Observer::Energy { stride }];
    let run = evolve(&u0, &xi, scheme, &cfg, spec.t_final, &observers)?;

    let mut history = String::from("step,time,mass,energy\n");
    let mut pending: Option<(usize, f64, f64)> = None;
    for rec in &run.records {
        match rec.observation {
            Observation::Mass(m) => pending = Some((rec.step, rec.time, m)),
            Observation::Energy(e) => {
                if let Some((step, time, m)) = pending.take() {
                    debug_assert_eq!(step, rec.step);
                    let _ = writeln!(history, "{step},{time:e},{m:e},{e:e}");
                }
            }
            Observation::Snapshot(_) => {}
        }
    }
    let mut snapshot = String::from("k,re,im\n");
    for (k, c) in run.final_state.modes() {
        let _ = writeln!(snapshot, "{k},{:e},{:e}", c.re, c.im);
    }
    let meta = serde_json::json!({
        "spec": spec,
        "fingerprint": spec.fingerprint(),
        "scheme": scheme,
        "steps": run.steps,
    });

    let dir = common.out_dir(&spec);
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("snapshot.csv"), snapshot)?;
    fs::write(dir.join("observables.csv"), history)?;
    fs::write(
        dir.join("simulate.metadata.json"),
        serde_json::to_string_pretty(&meta).expect("json") + "\n",
    )?;
    let (m0, m1) = (mass(&u0), mass(&run.final_state));
    let (e0, e1) = (energy(&u0, &xi, spec.lambda)?, energy(&run.final_state, &xi, spec.lambda)?);
    println!("{scheme}: {} steps of {:e} to t = {}", run.steps, spec.tau, spec.t_final);
    println!("  mass {m0:.10e} -> {m1:.10e}");
    println!("  energy {e0:.10e} -> {e1:.10e}");
    println!("  wrote {}", dir.join("snapshot.csv").display());
    Ok(())
}

fn export_potential(common: &Common) -> roughnls::Result<()> {
    let spec = common.resolve_any()?;
    let grid = spec.grid()?;
    let xi = spec.build_potential(&grid)?;
    let dir = common.out_dir(&spec);
    fs::create_dir_all(&dir)?;
    let path = dir.join("potential.csv");
    fs::write(&path, xi.to_csv())?;
    println!("wrote {}", path.display());
    Ok(())
}

fn run(cli: Cli) -> roughnls::Result<()> {
    match cli.command {
        Command::Simulate(c) => simulate(&c),
        Command::Regularity(c) => run_spec(&c.resolve(ExperimentKind::Regularity)?, &c),
        Command::Converge(c) => run_spec(&c.resolve(ExperimentKind::Convergence)?, &c),
        Command::Compare(c) => run_spec(&c.resolve(ExperimentKind::Comparison)?, &c),
        Command::Illposed(c) => run_spec(&c.resolve(ExperimentKind::Illposed)?, &c),
        Command::Preset { name, common } => {
            if name == "list" {
                for p in PRESETS {
                    println!("{p}");
                }
                return Ok(());
            }
            if common.spec.is_some() {
                return Err(Error::Validation {
                    field: "spec".into(),
                    message: "presets do not take a spec file".into(),
                });
            }
            let spec = preset(&name)?.with_overrides(&common.overrides())?;
            run_spec(&spec, &common)
        }
        Command::ExportPotential(c) => export_potential(&c),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
