use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use polyconsensus::dynamics::{random_initial_state, rk4_simulate, TraceMetadata};
use polyconsensus::model::{content_hash, example, ModelConfig, EXAMPLE_NAMES, MODEL_SCHEMA};
use polyconsensus::pipeline::{self, CertifyOptions, CertifyStatus};
use polyconsensus::sdp::certificate::{Certificate, Method, SolverInfo};
use polyconsensus::sdp::sdpa::{self, SOLVER_ENV};
use polyconsensus::Error;

const EXIT_INPUT: u8 = 1;
const EXIT_NOT_CERTIFIED: u8 = 2;
const EXIT_DIVERGED: u8 = 3;

#[derive(Parser)]
#[command(
    name = "polyconsensus",
    version,
    about = "Consensus certificates for polynomial multi-agent networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Theorem1,
    Theorem2,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Theorem1 => Method::Theorem1,
            MethodArg::Theorem2 => Method::Theorem2,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SolverArg {
    Builtin,
    SdpaExport,
}

#[derive(Subcommand)]
enum Command {
    /// Search for a consensus certificate and verify it.
    Certify {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        method: Option<MethodArg>,
        #[arg(long)]
        l: Option<usize>,
        #[arg(long)]
        epsilon: Option<f64>,
        /// Required margin on strict blocks.
        #[arg(long)]
        margin: Option<f64>,
        #[arg(long, value_enum, default_value = "builtin")]
        solver: SolverArg,
        /// Where to write the SDPA problem (sdpa-export only).
        #[arg(long)]
        sdpa: Option<PathBuf>,
        /// Read the decision vector from an SDPA or CSDP result file instead
        /// of solving.
        #[arg(long)]
        import: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Certificate output path (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a certificate against a model.
    Verify {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        cert: PathBuf,
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Integrate the network with RK4 and write a CSV trace.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        cert: Option<PathBuf>,
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
        #[arg(long = "t-final", default_value_t = 20.0)]
        t_final: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Initial states are uniform in [-amplitude, amplitude].
        #[arg(long, default_value_t = 2.0)]
        amplitude: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write one of the built-in example models.
    Example {
        #[arg(value_parser = clap::builder::PossibleValuesParser::new(EXAMPLE_NAMES))]
        name: String,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Print the JSON schema for model files.
    Schema,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Certify {
            config,
            method,
            l,
            epsilon,
            margin,
            solver,
            sdpa,
            import,
            seed,
            out,
        } => {
            let overrides = Overrides {
                method: method.map(Method::from),
                l,
                epsilon,
                margin,
                seed,
            };
            certify(&config, &overrides, solver, sdpa, import, out)
        }
        Command::Verify { config, cert, tol } => verify(&config, &cert, tol),
        Command::Simulate {
            config,
            cert,
            dt,
            t_final,
            seed,
            amplitude,
            out,
        } => simulate(&config, cert.as_deref(), dt, t_final, seed, amplitude, &out),
        Command::Example { name, out } => write_example(&name, &out),
        Command::Schema => {
            println!("{MODEL_SCHEMA}");
            Ok(0)
        }
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_INPUT)
        }
    }
}

struct Overrides {
    method: Option<Method>,
    l: Option<usize>,
    epsilon: Option<f64>,
    margin: Option<f64>,
    seed: u64,
}

fn load_config(path: &Path) -> Result<ModelConfig, Error> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    ModelConfig::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<(), Error> {
    match out {
        Some(p) => fs::write(p, text)?,
        None => println!("{text}"),
    }
    Ok(())
}

fn certify(
    config: &Path,
    ov: &Overrides,
    solver: SolverArg,
    sdpa_path: Option<PathBuf>,
    import: Option<PathBuf>,
    out: Option<PathBuf>,
) -> Result<u8, Error> {
    let cfg = load_config(config)?;
    let model = cfg.build()?;
    let hash = cfg.hash();
    let mut opts = CertifyOptions::from_defaults(&cfg.defaults);
    if let Some(m) = ov.method {
        opts.method = m;
    }
    if let Some(l) = ov.l {
        opts.l = l;
    }
    if let Some(e) = ov.epsilon {
        opts.epsilon = e;
    }
    if let Some(m) = ov.margin {
        opts.margins.strict = m;
    }
    opts.solve.seed = ov.seed;

    let external = solver == SolverArg::SdpaExport || import.is_some();
    if external {
        let (system, problem) = pipeline::feasibility_problem(&model, &opts)?;
        for w in &system.warnings {
            eprintln!("warning: {w}");
        }
        let y = match import {
            Some(path) => {
                let mut x = sdpa::import_sdpa_solution(&path, problem.n_vars())?;
                x.pop();
                x
            }
            None => {
                let path = sdpa_path.unwrap_or_else(|| {
                    out.as_ref()
                        .map(|p| p.with_extension("dat-s"))
                        .unwrap_or_else(|| PathBuf::from("problem.dat-s"))
                });
                sdpa::export_sdpa(&problem, &path)?;
                eprintln!("wrote SDPA problem to {}", path.display());
                match std::env::var(SOLVER_ENV) {
                    Ok(cmd) if !cmd.is_empty() => {
                        let dir = path
                            .parent()
                            .filter(|p| !p.as_os_str().is_empty())
                            .unwrap_or(Path::new("."));
                        sdpa::run_external(&problem, &cmd, dir)?
                    }
                    _ => {
                        eprintln!("{SOLVER_ENV} is not set; solve the exported problem and rerun with --import");
                        return Ok(EXIT_NOT_CERTIFIED);
                    }
                }
            }
        };
        let solver = SolverInfo {
            name: "external-sdpa".into(),
            iterations: 0,
        };
        let (cert, report) = pipeline::finish(&model, &system, &problem, &y, &opts, &hash, solver)?;
        write_or_print(out.as_deref(), &cert.to_json()?)?;
        return Ok(report_summary(report.verified, report.worst_violation));
    }

    let outcome = pipeline::certify(&model, &hash, &opts)?;
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    match &outcome.status {
        CertifyStatus::Certified => {
            let cert = outcome
                .certificate
                .as_ref()
                .expect("certified outcome carries a certificate");
            write_or_print(out.as_deref(), &cert.to_json()?)?;
            let report = outcome
                .report
                .as_ref()
                .expect("certified outcome carries a report");
            Ok(report_summary(report.verified, report.worst_violation))
        }
        CertifyStatus::Rejected => {
            let report = outcome
                .report
                .as_ref()
                .expect("rejected outcome carries a report");
            eprintln!("solver point failed independent verification");
            println!(
                "{}",
                serde_json::to_string_pretty(report).map_err(Error::from)?
            );
            Ok(EXIT_NOT_CERTIFIED)
        }
        CertifyStatus::Infeasible { evidence } => {
            eprintln!("infeasible");
            println!(
                "{}",
                serde_json::to_string_pretty(evidence).map_err(Error::from)?
            );
            Ok(EXIT_NOT_CERTIFIED)
        }
        CertifyStatus::Unknown { reason } => {
            eprintln!("unknown: {reason}");
            Ok(EXIT_NOT_CERTIFIED)
        }
    }
}

fn report_summary(verified: bool, worst: f64) -> u8 {
    if verified {
        eprintln!("certified (worst scaled violation {worst:.3e})");
        0
    } else {
        eprintln!("not certified: verification failed (worst scaled violation {worst:.3e})");
        EXIT_NOT_CERTIFIED
    }
}

fn verify(config: &Path, cert_path: &Path, tol: Option<f64>) -> Result<u8, Error> {
    let cfg = load_config(config)?;
    let model = cfg.build()?;
    let cert = Certificate::from_json(&fs::read_to_string(cert_path)?)?;
    if cert.model_hash != cfg.hash() {
        eprintln!(
            "warning: certificate was issued for model {} but this model hashes to {}",
            cert.model_hash,
            cfg.hash()
        );
    }
    let report = pipeline::verify(&model, &cert, tol.unwrap_or(cfg.defaults.verify_tol))?;
    println!(
        "{}",
        serde_json::to_string_pretty(&report).map_err(Error::from)?
    );
    let worst_pos = report.checks.iter().min_by(|a, b| {
        (a.positivity_min_eig / a.positivity_scale)
            .total_cmp(&(b.positivity_min_eig / b.positivity_scale))
    });
    let worst_der = report.checks.iter().max_by(|a, b| {
        (a.derivative_max_eig / a.derivative_scale)
            .total_cmp(&(b.derivative_max_eig / b.derivative_scale))
    });
    if let (Some(p), Some(d)) = (worst_pos, worst_der) {
        eprintln!(
            "positivity: min eigenvalue {:.3e} at lambda {:.6}; derivative: max eigenvalue {:.3e} at lambda {:.6}",
            p.positivity_min_eig, p.lambda, d.derivative_max_eig, d.lambda
        );
    }
    Ok(if report.verified {
        eprintln!("verified");
        0
    } else {
        eprintln!("verification failed");
        EXIT_NOT_CERTIFIED
    })
}

fn simulate(
    config: &Path,
    cert_path: Option<&Path>,
    dt: f64,
    t_final: f64,
    seed: u64,
    amplitude: f64,
    out: &Path,
) -> Result<u8, Error> {
    let cfg = load_config(config)?;
    let model = cfg.build()?;
    let (lyap, cert_hash) = match cert_path {
        Some(p) => {
            let text = fs::read_to_string(p)?;
            let cert = Certificate::from_json(&text)?;
            (
                Some(cert.lyapunov_matrices()?),
                Some(content_hash(text.as_bytes())),
            )
        }
        None => (None, None),
    };
    let x0 = random_initial_state(model.state_len(), amplitude, seed);
    let trace = rk4_simulate(&model, &x0, dt, t_final, lyap.as_deref())?;
    trace.write_csv(out)?;
    let meta = TraceMetadata {
        seed: Some(seed),
        dt,
        t_final,
        steps: trace.times.len() - 1,
        model_hash: cfg.hash(),
        certificate_hash: cert_hash,
        diverged: trace.diverged,
    };
    let meta_path = out.with_extension("meta.json");
    fs::write(
        &meta_path,
        serde_json::to_string_pretty(&meta).map_err(Error::from)?,
    )?;
    let d0 = trace.disagreement[0];
    let d1 = *trace
        .disagreement
        .last()
        .expect("trace has the initial sample");
    let v_ratio = trace
        .v
        .as_ref()
        .map(|v| format!("{:.3e}", v.last().unwrap() / v[0]))
        .unwrap_or_else(|| "n/a".into());
    println!(
        "t = {:.3}: disagreement {d1:.3e} (initial {d0:.3e}), V(t)/V(0) = {v_ratio}",
        trace.times.last().unwrap()
    );
    if trace.diverged {
        eprintln!("trajectory diverged; partial trace written");
        return Ok(EXIT_DIVERGED);
    }
    Ok(0)
}

fn write_example(name: &str, dir: &Path) -> Result<u8, Error> {
    let cfg =
        example(name).ok_or_else(|| Error::InvalidArgument(format!("unknown example {name}")))?;
    fs::create_dir_all(dir)?;
    let path = dir.join(format!("{name}.json"));
    fs::write(&path, cfg.to_json()?)?;
    println!("{}", path.display());
    Ok(0)
}
