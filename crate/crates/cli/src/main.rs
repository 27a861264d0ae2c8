use std::fmt::Display;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use smallworld::coalesce::{
    kingman_row, summarize as summarize_coalescence, trajectories_to_csv, CoalescenceExperiment,
    ExperimentPlan, StartSet,
};
use smallworld::green::{beta_comparison_scan, solve_bigworld_green, GreenReport};
use smallworld::spectral::{iso_survey, spectral_report};
use smallworld::stats::{
    empirical_laplace, laplace_limit_distant, limit_law_hitting, limit_law_meeting,
    limit_law_meeting_coincident_jump_chain, summarize, EmpiricalDistribution, LimitLaw, MeetingStart,
};
use smallworld::topology::{sample_small_world, SitePoint, TorusSpec};
use smallworld::walk::{
    samples_to_csv, GraphMode, PassageKind, StartSpec, TimeModel, WalkExperiment, WalkKernel,
    DEFAULT_HORIZON_FACTOR,
};

const OUT_DIR_ENV: &str = "SMALLWORLD_OUT_DIR";

#[derive(Parser)]
#[command(name = "smallworld", version, about = "Random walks on small-world tori")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a small-world graph.
    Gen(Opts),
    /// Meeting time of two walkers.
    Meet(Opts),
    /// Hitting time of the origin.
    Hit(Opts),
    /// Coalescing walks against the Kingman law.
    Coalesce(Opts),
    /// Big-world Green function at the origin.
    Green(Opts),
    /// Lattice against big-world Green function across beta.
    Betascan(Opts),
    /// Isoperimetric constants of sampled graphs.
    Iso(Opts),
    /// Spectral gap, Cheeger bound and mixing profile of one graph.
    Spectral(Opts),
    /// Block-counting law of the Kingman coalescent.
    Kingman(Opts),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Gen(_) => "gen",
            Command::Meet(_) => "meet",
            Command::Hit(_) => "hit",
            Command::Coalesce(_) => "coalesce",
            Command::Green(_) => "green",
            Command::Betascan(_) => "betascan",
            Command::Iso(_) => "iso",
            Command::Spectral(_) => "spectral",
            Command::Kingman(_) => "kingman",
        }
    }

    fn opts(&self) -> &Opts {
        match self {
            Command::Gen(o)
            | Command::Meet(o)
            | Command::Hit(o)
            | Command::Coalesce(o)
            | Command::Green(o)
            | Command::Betascan(o)
            | Command::Iso(o)
            | Command::Spectral(o)
            | Command::Kingman(o) => o,
        }
    }
}

/// Every option is optional so a `--config` file can fill the gaps;
/// command-line values win.
#[derive(Args, Serialize, Deserialize, Default, Clone, Debug)]
#[serde(default, deny_unknown_fields)]
struct Opts {
    /// JSON file with any of the options below.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Directory for CSV/JSON artifacts; defaults to $SMALLWORLD_OUT_DIR.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    out: Option<PathBuf>,

    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    d: Option<usize>,
    /// Half side length; the torus has (2L)^d sites.
    #[arg(long = "L", alias = "half-side")]
    #[serde(rename = "L", skip_serializing_if = "Option::is_none")]
    l: Option<u32>,
    /// Short-range radius.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    m: Option<u32>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    beta: Option<f64>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    lazy: Option<bool>,
    /// continuous or discrete.
    #[arg(long, value_parser = parse_time_model)]
    #[serde(skip_serializing_if = "Option::is_none")]
    time_model: Option<TimeModel>,

    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    /// Fixed graph for every replica.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    graph_seed: Option<u64>,
    /// Fresh graph per replica.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    annealed: Option<bool>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    replicas: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    horizon_factor: Option<f64>,

    /// antipodal (alias distant), uniform, explicit, or for coalesce spread.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    start: Option<String>,
    /// First walker, comma-separated coordinates.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    x: Option<Vec<i64>>,
    /// Second walker, comma-separated coordinates.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    y: Option<Vec<i64>>,

    /// Particle count for coalesce and kingman.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    n: Option<usize>,
    /// Rescaled times, comma-separated.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    t: Option<Vec<f64>>,
    /// Override for `G^ev_B(0)` in coalesce.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    green_even: Option<f64>,

    /// Beta grid for betascan, comma-separated.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    betas: Option<Vec<f64>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    bracket_tol: Option<f64>,

    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    samples: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    alpha: Option<f64>,
    /// Largest time of the mixing grid.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    t_max: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    points: Option<usize>,

    /// KS pass threshold.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    tolerance: Option<f64>,
}

fn parse_time_model(s: &str) -> Result<TimeModel, String> {
    match s {
        "continuous" => Ok(TimeModel::Continuous),
        "discrete" => Ok(TimeModel::Discrete),
        _ => Err(format!("expected continuous or discrete, got '{s}'")),
    }
}

#[derive(Debug)]
struct Failure {
    kind: &'static str,
    message: String,
}

fn config_err(msg: impl Display) -> Failure {
    Failure { kind: "config", message: msg.to_string() }
}

fn run_err(msg: impl Display) -> Failure {
    Failure { kind: "computation", message: msg.to_string() }
}

fn io_err(msg: impl Display) -> Failure {
    Failure { kind: "io", message: msg.to_string() }
}

type Res<T> = Result<T, Failure>;

fn merge(opts: &Opts) -> Res<Opts> {
    let Some(path) = &opts.config else {
        return Ok(opts.clone());
    };
    let text = std::fs::read_to_string(path).map_err(|e| io_err(format!("{}: {e}", path.display())))?;
    let mut base: Map<String, Value> = serde_json::from_str(&text).map_err(|e| config_err(format!("config: {e}")))?;
    if let Value::Object(cli) = serde_json::to_value(opts).map_err(config_err)? {
        base.extend(cli);
    }
    serde_json::from_value(Value::Object(base)).map_err(|e| config_err(format!("config: {e}")))
}

/// Resolved settings with their defaults, echoed into every report.
struct Resolver {
    opts: Opts,
    echo: Map<String, Value>,
}

impl Resolver {
    fn get<T: Serialize + Clone>(&mut self, key: &str, value: Option<T>, default: T) -> T {
        let v = value.unwrap_or(default);
        self.echo.insert(key.into(), json!(v));
        v
    }

    fn d(&mut self, default: usize) -> usize {
        self.get("d", self.opts.d, default)
    }

    fn beta(&mut self, default: f64) -> f64 {
        self.get("beta", self.opts.beta, default)
    }

    fn seed(&mut self) -> u64 {
        self.get("seed", self.opts.seed, 1)
    }

    fn spec(&mut self, d: usize, l: u32) -> Res<TorusSpec> {
        let l = self.get("L", self.opts.l, l);
        let m = self.get("m", self.opts.m, 1);
        TorusSpec::new(d, l, m).map_err(config_err)
    }

    fn kernel(&mut self, spec: &TorusSpec, beta: f64, lazy: bool) -> Res<WalkKernel> {
        let lazy = self.get("lazy", self.opts.lazy, lazy);
        let k = WalkKernel::simple(spec, beta).map_err(config_err)?;
        Ok(if lazy { k.lazy() } else { k })
    }

    fn time_model(&mut self) -> TimeModel {
        self.get("time_model", self.opts.time_model, TimeModel::Continuous)
    }

    fn graph_mode(&mut self) -> Res<GraphMode> {
        let annealed = self.opts.annealed.unwrap_or(false);
        match (annealed, self.opts.graph_seed) {
            (true, Some(_)) => Err(config_err("--annealed and --graph-seed are mutually exclusive")),
            (true, None) => {
                self.echo.insert("annealed".into(), json!(true));
                Ok(GraphMode::Annealed)
            }
            (false, gs) => {
                let graph_seed = self.get("graph_seed", gs, 0);
                Ok(GraphMode::Quenched { graph_seed })
            }
        }
    }

    fn point(&mut self, spec: &TorusSpec, key: &str) -> Res<SitePoint> {
        let coords = match key {
            "x" => self.opts.x.clone(),
            _ => self.opts.y.clone(),
        }
        .ok_or_else(|| config_err(format!("--start explicit needs --{key}")))?;
        self.echo.insert(key.into(), json!(coords));
        spec.point(&coords).map_err(config_err)
    }
}

fn positive(name: &str, v: f64) -> Res<f64> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(config_err(format!("{name} must be positive, got {v}")))
    }
}

/// Big-world Green function for the plain nearest-neighbour kernel, the
/// only case with a fixed-point characterisation.
fn green_if_available(spec: &TorusSpec, kernel: &WalkKernel) -> Option<GreenReport> {
    let beta = kernel.beta();
    if spec.m != 1 || kernel.is_lazy() || spec.d == 2 || !(beta > 0.0 && beta < 1.0) {
        return None;
    }
    solve_bigworld_green(spec.d, beta).ok()
}

struct Output {
    report: Value,
    artifacts: Vec<(String, String)>,
}

fn passage(cmd: &str, r: &mut Resolver, kind: PassageKind) -> Res<Output> {
    let d = r.d(1);
    let spec = r.spec(d, 64)?;
    let beta = r.beta(0.3);
    let kernel = r.kernel(&spec, beta, false)?;
    let time_model = r.time_model();
    let graph_mode = r.graph_mode()?;
    let replicas = r.get("replicas", r.opts.replicas, 1000);
    let master_seed = r.seed();
    let horizon_factor = r.get("horizon_factor", r.opts.horizon_factor, DEFAULT_HORIZON_FACTOR);
    let tolerance = r.get("tolerance", r.opts.tolerance, 0.05);
    let default_start = if r.opts.x.is_some() { "explicit" } else { "antipodal" };
    let start_name = r.get("start", r.opts.start.clone(), default_start.to_string());
    let start = match start_name.as_str() {
        "antipodal" | "distant" => StartSpec::Distant,
        "uniform" => StartSpec::Uniform,
        "explicit" => {
            let x = r.point(&spec, "x")?;
            let y = match kind {
                PassageKind::Meeting => r.point(&spec, "y")?,
                PassageKind::Hitting => spec.origin(),
            };
            StartSpec::Explicit { x, y }
        }
        other => return Err(config_err(format!("unknown start '{other}'"))),
    };
    let exp = WalkExperiment {
        spec,
        kernel,
        time_model,
        kind,
        start: start.clone(),
        graph_mode,
        replicas,
        master_seed,
        horizon_factor,
    };
    exp.validate().map_err(config_err)?;
    let samples = exp.run().map_err(run_err)?;
    let emp = EmpiricalDistribution::new(samples.iter().map(|s| (s.rescaled, s.censored)));

    let green = green_if_available(&spec, &exp.kernel);
    let mut laws: Vec<(&str, LimitLaw)> = Vec::new();
    let mut laplace = Value::Null;
    if let Some(g) = &green {
        let coincident = matches!(&start, StartSpec::Explicit { x, y } if x == y);
        match kind {
            PassageKind::Meeting if coincident => {
                laws.push(("limit", limit_law_meeting(MeetingStart::Coincident, g.g_bigworld_even).map_err(run_err)?));
                laws.push(("escape_corrected", limit_law_meeting_coincident_jump_chain(g.g_bigworld).map_err(run_err)?));
            }
            PassageKind::Meeting if !matches!(start, StartSpec::Explicit { .. }) => {
                laws.push(("limit", limit_law_meeting(MeetingStart::Distant, g.g_bigworld_even).map_err(run_err)?));
                let lambdas = [0.5, 1.0, 2.0];
                let emp_l = empirical_laplace(&emp, &lambdas, 1.0);
                laplace = Value::Array(
                    lambdas
                        .iter()
                        .zip(&emp_l)
                        .map(|(&l, &e)| json!({"lambda": l, "empirical": e, "limit": laplace_limit_distant(l, g.g_bigworld_even)}))
                        .collect(),
                );
            }
            PassageKind::Hitting if coincident => {
                laws.push(("limit", limit_law_hitting(true, g.g_bigworld).map_err(run_err)?));
            }
            PassageKind::Hitting if !matches!(start, StartSpec::Explicit { .. }) => {
                laws.push(("limit", limit_law_hitting(false, g.g_bigworld).map_err(run_err)?));
            }
            _ => {}
        }
    }
    let mut comparisons = Map::new();
    for (name, law) in laws {
        let s = summarize(&emp, law, tolerance, 0.05).map_err(run_err)?;
        comparisons.insert(name.into(), serde_json::to_value(s).map_err(run_err)?);
    }
    let report = json!({
        "replicas": emp.len(),
        "censored": emp.censored(),
        "censored_fraction": emp.censored_fraction(),
        "mean_rescaled": emp.mean(),
        "se_rescaled": emp.standard_error(),
        "green": green.map(|g| json!({"G_bigworld": g.g_bigworld, "G_bigworld_even": g.g_bigworld_even})),
        "laws": comparisons,
        "laplace": laplace,
    });
    Ok(Output {
        report,
        artifacts: vec![(format!("{cmd}_samples.csv"), samples_to_csv(cmd, &exp, &samples))],
    })
}

fn gen(r: &mut Resolver) -> Res<Output> {
    let d = r.d(1);
    let spec = r.spec(d, 8)?;
    let seed = r.get("graph_seed", r.opts.graph_seed.or(r.opts.seed), 0);
    let g = sample_small_world(spec, seed);
    let graph: Value = serde_json::from_str(&g.to_json()).map_err(run_err)?;
    Ok(Output {
        report: json!({"sites": g.num_sites(), "graph": graph}),
        artifacts: vec![("graph.json".into(), g.to_json())],
    })
}

fn coalesce(r: &mut Resolver) -> Res<Output> {
    let d = r.d(1);
    let spec = r.spec(d, 64)?;
    let beta = r.beta(0.3);
    let kernel = r.kernel(&spec, beta, false)?;
    let time_model = r.time_model();
    let graph_mode = r.graph_mode()?;
    let replicas = r.get("replicas", r.opts.replicas, 1000);
    let master_seed = r.seed();
    let n = r.get("n", r.opts.n, 4);
    let t_grid = r.get("t", r.opts.t.clone(), vec![0.5, 1.0, 2.0]);
    let start = r.get("start", r.opts.start.clone(), "spread".to_string());
    let starts = match start.as_str() {
        "spread" => StartSet::Spread,
        "uniform" => StartSet::Uniform,
        other => return Err(config_err(format!("coalesce start must be spread or uniform, got '{other}'"))),
    };
    let (green_even, source) = match r.opts.green_even {
        Some(g) => (positive("green_even", g)?, "user".to_string()),
        None => {
            let g = green_if_available(&spec, &kernel)
                .ok_or_else(|| config_err("no fixed-point Green function for this kernel; pass --green-even"))?;
            (g.g_bigworld_even, format!("fixed point, d = {}, beta = {beta}", spec.d))
        }
    };
    r.echo.insert("green_even".into(), json!(green_even));
    let plan = ExperimentPlan::new(&spec, n, green_even, source, t_grid).map_err(config_err)?;
    let exp = CoalescenceExperiment {
        spec,
        kernel,
        time_model,
        starts,
        plan: plan.clone(),
        graph_mode,
        replicas,
        master_seed,
        stop_at_grid_end: true,
    };
    let trajectories = exp.run().map_err(run_err)?;
    let summary = summarize_coalescence(&plan, &trajectories).map_err(run_err)?;
    Ok(Output {
        report: json!({"h_L": plan.h_l, "summary": summary}),
        artifacts: vec![("coalesce_trajectories.csv".into(), trajectories_to_csv(&trajectories))],
    })
}

fn green(r: &mut Resolver) -> Res<Output> {
    let d = r.d(1);
    let beta = r.beta(0.3);
    let rep = solve_bigworld_green(d, beta).map_err(config_err)?;
    Ok(Output { report: serde_json::to_value(rep).map_err(run_err)?, artifacts: vec![] })
}

fn betascan(r: &mut Resolver) -> Res<Output> {
    let d = r.d(3);
    let default: Vec<f64> = (1..=19).map(|i| i as f64 * 0.05).collect();
    let betas = r.get("betas", r.opts.betas.clone(), default);
    let tol = r.get("bracket_tol", r.opts.bracket_tol, 1e-3);
    let scan = beta_comparison_scan(d, &betas, tol).map_err(config_err)?;
    Ok(Output {
        report: serde_json::to_value(&scan).map_err(run_err)?,
        artifacts: vec![("betascan.csv".into(), scan.to_csv())],
    })
}

fn iso(r: &mut Resolver) -> Res<Output> {
    let d = r.d(1);
    let spec = r.spec(d, 8)?;
    let beta = r.beta(0.3);
    let samples = r.get("samples", r.opts.samples, 200);
    let alpha = r.get("alpha", r.opts.alpha, 0.2);
    let seed = r.seed();
    let survey = iso_survey(&spec, beta, samples, alpha, seed).map_err(config_err)?;
    let iotas: Vec<f64> = survey.rows.iter().map(|row| row.iota).collect();
    let min = iotas.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(Output {
        report: json!({"samples": samples, "alpha": alpha, "fraction_above": survey.fraction_above, "min_iota": min}),
        artifacts: vec![("iso_survey.csv".into(), survey.to_csv())],
    })
}

fn spectral(r: &mut Resolver) -> Res<Output> {
    let d = r.d(1);
    let spec = r.spec(d, 8)?;
    let beta = r.beta(0.3);
    let kernel = r.kernel(&spec, beta, true)?;
    let graph_seed = r.get("graph_seed", r.opts.graph_seed.or(r.opts.seed), 0);
    let g = sample_small_world(spec, graph_seed);
    let points = r.get("points", r.opts.points, 61).max(2);
    let t_max = match r.opts.t_max {
        Some(t) => positive("t_max", t)?,
        None => {
            let gap = smallworld::spectral::spectral_gap(&g, &kernel).map_err(run_err)?.gap;
            25.0 / gap.max(1e-12)
        }
    };
    r.echo.insert("t_max".into(), json!(t_max));
    let grid: Vec<f64> = (0..points).map(|i| t_max * i as f64 / (points - 1) as f64).collect();
    let rep = spectral_report(&g, &kernel, &grid).map_err(run_err)?;
    Ok(Output { report: serde_json::to_value(rep).map_err(run_err)?, artifacts: vec![] })
}

fn kingman(r: &mut Resolver) -> Res<Output> {
    let n = r.get("n", r.opts.n, 2);
    let ts = r.get("t", r.opts.t.clone(), vec![1.0]);
    let mut table = Vec::new();
    let mut csv = String::from("t,k,probability\n");
    for &t in &ts {
        let row = kingman_row(n, t).map_err(config_err)?;
        for (i, q) in row.iter().enumerate() {
            csv.push_str(&format!("{t},{},{q:.15e}\n", i + 1));
        }
        let rows: Vec<Value> = row.iter().enumerate().map(|(i, q)| json!({"k": i + 1, "probability": q})).collect();
        table.push(json!({"t": t, "rows": rows}));
    }
    Ok(Output { report: json!({"n": n, "table": table}), artifacts: vec![("kingman.csv".into(), csv)] })
}

fn execute(cmd: &Command) -> Res<Value> {
    let opts = merge(cmd.opts())?;
    let name = cmd.name();
    let out_dir = opts.out.clone().or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from));
    let mut r = Resolver { opts, echo: Map::new() };
    let output = match cmd {
        Command::Gen(_) => gen(&mut r),
        Command::Meet(_) => passage(name, &mut r, PassageKind::Meeting),
        Command::Hit(_) => passage(name, &mut r, PassageKind::Hitting),
        Command::Coalesce(_) => coalesce(&mut r),
        Command::Green(_) => green(&mut r),
        Command::Betascan(_) => betascan(&mut r),
        Command::Iso(_) => iso(&mut r),
        Command::Spectral(_) => spectral(&mut r),
        Command::Kingman(_) => kingman(&mut r),
    }?;
    let mut report = json!({
        "tool": {"name": env!("CARGO_PKG_NAME"), "version": env!("CARGO_PKG_VERSION")},
        "command": name,
        "config": r.echo,
        "result": output.report,
    });
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(&dir).map_err(|e| io_err(format!("{}: {e}", dir.display())))?;
        let mut written = Vec::new();
        for (file, body) in &output.artifacts {
            let path = dir.join(file);
            std::fs::write(&path, body).map_err(|e| io_err(format!("{}: {e}", path.display())))?;
            written.push(path.display().to_string());
        }
        let summary = dir.join(format!("{name}_summary.json"));
        written.push(summary.display().to_string());
        report["artifacts"] = json!(written);
        let text = serde_json::to_string_pretty(&report).map_err(run_err)?;
        std::fs::write(&summary, text + "\n").map_err(|e| io_err(format!("{}: {e}", summary.display())))?;
    }
    Ok(report)
}

fn fail(f: Failure) -> ExitCode {
    let body = json!({"error": {"kind": f.kind, "message": f.message}});
    eprintln!("{body}");
    ExitCode::from(if f.kind == "config" { 2 } else { 1 })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            e.exit()
        }
        Err(e) => return fail(config_err(e.render().to_string().trim())),
    };
    match execute(&cli.command) {
        Ok(report) => {
            let text = serde_json::to_string_pretty(&report).expect("report serializes");
            match writeln!(std::io::stdout().lock(), "{text}") {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => ExitCode::SUCCESS,
                Err(e) => fail(io_err(e)),
            }
        }
        Err(f) => fail(f),
    }
}
