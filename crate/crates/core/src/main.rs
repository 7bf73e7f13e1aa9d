use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, bail, Context};
use clap::{Parser, Subcommand, ValueEnum};

use mtled::benchmarks::{cube, CubeSpec, GridLayout};
use mtled::cloud::check_admissibility;
use mtled::io::{
    histogram, nre_field, nrmse, write_stage_csv, write_step_csv, write_summary, write_vtk, ErrorReport, ModelFile,
    RunSummary,
};
use mtled::quadrature::{adaptive_integration_set, fixed_integration_set, AdaptiveConfig, QuadratureRule, Subdivision};
use mtled::solver::{
    critical_timestep, lump_mass, solve_with_progress, IntegrationScheme, Mode, PointShapes, SolveResult, SolverConfig,
};
use mtled::{Mmls, MmlsConfig, Vec3};

#[derive(Parser)]
#[command(name = "mtled", version, about = "Meshless total Lagrangian explicit dynamics for soft solids")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a model file and write VTK, CSV and JSON results.
    Solve(SolveArgs),
    /// Run a built-in verification problem.
    Verify {
        #[command(subcommand)]
        target: VerifyTarget,
    },
    /// Inspect inputs without solving.
    Check {
        #[command(subcommand)]
        target: CheckTarget,
    },
}

#[derive(clap::Args)]
struct SolveArgs {
    model: PathBuf,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Switch to adaptive integration with this accuracy.
    #[arg(long)]
    tau: Option<f64>,
    /// Number of VTK snapshots. In steady mode each snapshot is a load
    /// stage, so the stage count is raised to at least this.
    #[arg(long)]
    snapshots: Option<usize>,
    /// Reference nodal displacements, one `ux uy uz` line per node.
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Print solver progress to stderr.
    #[arg(short, long)]
    verbose: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Steady,
    Dynamic,
}

#[derive(Subcommand)]
enum VerifyTarget {
    /// Unconstrained compression of a cube against the closed-form solution.
    Cube {
        #[arg(long, value_enum, default_value = "coarse")]
        nodes: NodesArg,
        /// Add an adaptive-integration run with this accuracy.
        #[arg(long)]
        tau: Option<f64>,
        /// Bins of the relative error histogram.
        #[arg(long, default_value_t = 10)]
        bins: usize,
    },
    /// Rule exactness, volume conservation and refinement trend.
    Quadrature,
}

#[derive(Clone, Copy, ValueEnum)]
enum NodesArg {
    Coarse,
    Fine,
}

#[derive(Subcommand)]
enum CheckTarget {
    /// Support admissibility, critical time step and lumped mass.
    Model { path: PathBuf },
}

/// Exit status 1 for bad input or failed checks, 2 when the solver fails.
enum Failure {
    Validation(anyhow::Error),
    Solver(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Validation(e)
    }
}

type CliResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Ok(n) = std::env::var("MTLED_THREADS") {
        match n.parse::<usize>() {
            Ok(n) if n > 0 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => {
                eprintln!("error: MTLED_THREADS must be a positive integer, got `{n}`");
                return ExitCode::from(1);
            }
        }
    }
    let result = match cli.command {
        Command::Solve(args) => run_solve(&args),
        Command::Verify { target: VerifyTarget::Cube { nodes, tau, bins } } => verify_cube(nodes, tau, bins),
        Command::Verify { target: VerifyTarget::Quadrature } => verify_quadrature(),
        Command::Check { target: CheckTarget::Model { path } } => check_model(&path),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Solver(e)) => {
            eprintln!("solver failed: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn read_reference(path: &Path, nodes: usize) -> anyhow::Result<Vec<Vec3>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let rows: Vec<Vec3> = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(i, l)| {
            let v: Vec<f64> = l
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|s| !s.is_empty())
                .map(str::parse)
                .collect::<Result<_, _>>()
                .with_context(|| format!("{}:{}: expected three numbers", path.display(), i + 1))?;
            match v.as_slice() {
                [x, y, z] => Ok(Vec3::new(*x, *y, *z)),
                _ => bail!("{}:{}: expected three numbers, got {}", path.display(), i + 1, v.len()),
            }
        })
        .collect::<anyhow::Result<_>>()?;
    if rows.len() != nodes {
        bail!("reference has {} rows for {nodes} nodes", rows.len());
    }
    Ok(rows)
}

fn create(dir: &Path, name: &str) -> anyhow::Result<BufWriter<File>> {
    let path = dir.join(name);
    Ok(BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?))
}

fn run_solve(args: &SolveArgs) -> CliResult {
    let mut file = ModelFile::load(&args.model).with_context(|| format!("loading {}", args.model.display()))?;
    let s = &mut file.settings;
    if let Some(m) = args.mode {
        s.mode = Some(match m {
            ModeArg::Steady => "steady".into(),
            ModeArg::Dynamic => "dynamic".into(),
        });
    }
    if let Some(tau) = args.tau {
        s.integration = Some("adaptive".into());
        s.tau = Some(tau);
    }
    if let Some(n) = args.snapshots {
        s.snapshots = Some(n);
    }
    let (model, mut cfg) = file.build().map_err(anyhow::Error::from)?;
    if cfg.mode == Mode::Steady {
        cfg.load_stages = cfg.load_stages.max(cfg.snapshots);
    }
    let reference = args.reference.as_deref().map(|p| read_reference(p, model.cloud.len())).transpose()?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;

    let started = Instant::now();
    let verbose = args.verbose;
    let mut progress = |p: &mtled::solver::Progress| {
        if verbose && p.iteration % 1000 == 0 {
            eprintln!(
                "iteration {:>8}  load {:.4}  residual {:.3e}  increment {:.3e}",
                p.iteration, p.load_factor, p.residual, p.max_increment
            );
        }
    };
    let result = match solve_with_progress(&model, &cfg, &mut progress) {
        Ok(r) => r,
        Err(f) => {
            write_step_csv(create(&args.out, "steps.csv")?, &f.steps).context("writing steps.csv")?;
            if let Some(snap) = &f.last_good {
                let title = format!("last equilibrium before failure, load factor {}", snap.load_factor);
                write_vtk(create(&args.out, "last_good.vtk")?, &model.cloud, &snap.displacements, &title)
                    .context("writing last_good.vtk")?;
            }
            return Err(Failure::Solver(anyhow!(f.error)));
        }
    };

    let mut names = Vec::new();
    for (i, snap) in result.snapshots.iter().enumerate() {
        let name = format!("snapshot_{:04}.vtk", i + 1);
        let title = format!("step {} time {:e} load factor {}", snap.step, snap.time, snap.load_factor);
        write_vtk(create(&args.out, &name)?, &model.cloud, &snap.displacements, &title)
            .with_context(|| format!("writing {name}"))?;
        names.push(name);
    }
    write_vtk(create(&args.out, "final.vtk")?, &model.cloud, &result.displacements, "final state")
        .context("writing final.vtk")?;
    write_step_csv(create(&args.out, "steps.csv")?, &result.steps).context("writing steps.csv")?;
    if cfg.mode == Mode::Steady {
        write_stage_csv(create(&args.out, "stages.csv")?, &result.stages).context("writing stages.csv")?;
    }
    let error_report = reference
        .as_ref()
        .map(|r| ErrorReport::new(&result.displacements, r, 10))
        .transpose()
        .context("comparing with the reference")?;
    let summary = summarize(&model, &cfg, &result, names, error_report);
    write_summary(create(&args.out, "summary.json")?, &summary).context("writing summary.json")?;

    println!(
        "{} nodes, {} integration points, {} iterations in {:.1} s",
        summary.nodes,
        summary.integration_points,
        summary.iterations,
        started.elapsed().as_secs_f64()
    );
    let r = summary.final_reaction;
    println!("reaction on driven nodes: ({:.6e}, {:.6e}, {:.6e}) N", r[0], r[1], r[2]);
    println!("max boundary error {:.3e} m, det X in [{:.4}, {:.4}]", summary.max_ebc_error, summary.min_det, summary.max_det);
    if let Some(rep) = &summary.error_report {
        for (axis, v) in ["x", "y", "z"].iter().zip(rep.nrmse) {
            if let Some(v) = v {
                println!("NRMSE(u_{axis}) = {v:.3e}");
            }
        }
    }
    println!("results in {}", args.out.display());
    Ok(())
}

fn summarize(
    model: &mtled::Model,
    cfg: &SolverConfig,
    r: &SolveResult,
    snapshots: Vec<String>,
    error_report: Option<ErrorReport>,
) -> RunSummary {
    RunSummary {
        nodes: model.cloud.len(),
        cells: model.cloud.cells().len(),
        integration_points: r.integration_points,
        capped_cells: r.capped_cells,
        material: match model.material {
            mtled::Material::NeoHookean(_) => "neo_hookean".into(),
            mtled::Material::Ogden(_) => "ogden".into(),
        },
        mode: cfg.mode.name().into(),
        ebc_method: cfg.ebc_method.name().into(),
        timestep: r.timestep,
        final_damping: r.final_damping,
        iterations: r.steps.len(),
        converged: r.converged,
        total_mass: r.total_mass,
        max_ebc_error: r.max_ebc_error,
        min_det: r.min_det,
        max_det: r.max_det,
        residual_ratio: r.residual_ratio,
        final_reaction: r.final_reaction().into(),
        snapshots,
        error_report,
    }
}

fn verify_cube(nodes: NodesArg, tau: Option<f64>, bins: usize) -> CliResult {
    let layout = match nodes {
        NodesArg::Coarse => GridLayout::COARSE,
        NodesArg::Fine => GridLayout::FINE,
    };
    let coarse = matches!(nodes, NodesArg::Coarse);
    let base = CubeSpec { layout, ..CubeSpec::default() };
    let mut runs = vec![
        ("1-point", CubeSpec::ONE_POINT_RADIUS_FACTOR, IntegrationScheme::Fixed { rule_order: 1 }, coarse.then_some(5e-3)),
        ("4-point", base.radius_factor, IntegrationScheme::Fixed { rule_order: 2 }, None),
    ];
    if let Some(tau) = tau {
        let a = AdaptiveConfig { tau, ..AdaptiveConfig::default() };
        let target = (coarse && tau <= 0.01).then_some(5e-4);
        runs.push(("adaptive", base.radius_factor, IntegrationScheme::Adaptive(a), target));
    }

    println!(
        "cube {} nodes, {:.0}% compression, E = {} Pa, nu = {}",
        layout.node_count(),
        100.0 * base.compression,
        base.young,
        base.poisson
    );
    println!("{:<10} {:>9} {:>8} {:>11} {:>11} {:>10} {:>8}  check", "rule", "points", "radius", "NRMSE(u_z)", "max NRE", "iterations", "time");
    let mut failed = false;
    let mut last_nre = Vec::new();
    for (label, rf, scheme, target) in runs {
        let spec = CubeSpec { radius_factor: rf, ..base };
        let bench = cube(&spec).map_err(anyhow::Error::from)?;
        let reference = spec.reference(&bench.model.cloud).map_err(anyhow::Error::from)?;
        let mut cfg = SolverConfig::new(bench.radius);
        cfg.integration = scheme;
        let t = Instant::now();
        let r = mtled::solve(&bench.model, &cfg).map_err(|f| Failure::Solver(anyhow!(f.error)))?;
        let err = nrmse(&r.displacements, &reference, 2).map_err(anyhow::Error::from)?;
        let nre = nre_field(&r.displacements, &reference, 2).map_err(anyhow::Error::from)?;
        let check = match target {
            Some(t) if err <= t => format!("pass (<= {t:e})"),
            Some(t) => {
                failed = true;
                format!("FAIL (> {t:e})")
            }
            None => "-".into(),
        };
        println!(
            "{:<10} {:>9} {:>8.4} {:>11.3e} {:>11.3e} {:>10} {:>7.1}s  {}",
            label,
            r.integration_points,
            bench.radius,
            err,
            nre.iter().copied().fold(0.0, f64::max),
            r.steps.len(),
            t.elapsed().as_secs_f64(),
            check
        );
        last_nre = nre;
    }
    let h = histogram(&last_nre, bins);
    println!("node-wise relative error of u_z, last run:");
    for (i, c) in h.counts.iter().enumerate() {
        println!("  [{:.2e}, {:.2e}] {c}", h.edges[i], h.edges[i + 1]);
    }
    if failed {
        return Err(Failure::Validation(anyhow!("cube error above target")));
    }
    Ok(())
}

fn verify_quadrature() -> CliResult {
    let mut ok = true;
    let mut report = |name: String, pass: bool| {
        ok &= pass;
        println!("{} {name}", if pass { "pass" } else { "FAIL" });
    };

    // Monomials over the reference tetrahedron, exact value a! b! c! / (a+b+c+3)!.
    let reference = [Vec3::zeros(), Vec3::x(), Vec3::y(), Vec3::z()];
    let fact = |n: u32| (1..=n).map(f64::from).product::<f64>();
    for order in [1, 2, 3] {
        let rule = QuadratureRule::with_order(order).map_err(anyhow::Error::from)?;
        let mut worst: f64 = 0.0;
        for a in 0..=rule.order as u32 {
            for b in 0..=(rule.order as u32 - a) {
                for c in 0..=(rule.order as u32 - a - b) {
                    let q: f64 = rule
                        .map(&reference)
                        .map(|(p, w)| p.x.powi(a as i32) * p.y.powi(b as i32) * p.z.powi(c as i32) * w)
                        .sum();
                    let exact = fact(a) * fact(b) * fact(c) / fact(a + b + c + 3);
                    worst = worst.max(((q - exact) / exact).abs());
                }
            }
        }
        report(format!("{}-point rule exact to degree {}: worst relative error {worst:.1e}", rule.weights.len(), rule.order), worst < 1e-12);
    }

    let bench = cube(&CubeSpec::default()).map_err(anyhow::Error::from)?;
    let cloud = &bench.model.cloud;
    let mmls = Mmls::new(cloud, MmlsConfig::new(bench.radius)).map_err(anyhow::Error::from)?;
    let v0 = cloud.volume();
    for arity in [2, 4, 8] {
        for depth in [1, 2] {
            // A tiny tolerance forces refinement down to the cap.
            let cfg = AdaptiveConfig {
                tau: 1e-12,
                scheme: Subdivision::from_arity(arity).map_err(anyhow::Error::from)?,
                max_depth: depth,
                rule_order: 1,
            };
            let set = adaptive_integration_set(cloud, &mmls, &cfg).map_err(anyhow::Error::from)?;
            let rel = (set.total_weight() - v0).abs() / v0;
            report(format!("volume with {arity}-way split to depth {depth}: relative error {rel:.1e}"), rel < 1e-10);
        }
    }

    let mut counts = Vec::new();
    for tau in [0.1, 0.05, 0.01] {
        let set = adaptive_integration_set(cloud, &mmls, &AdaptiveConfig { tau, ..AdaptiveConfig::default() })
            .map_err(anyhow::Error::from)?;
        println!("     tau {tau:<5} -> {} points", set.len());
        counts.push(set.len());
    }
    report("point count grows as tau decreases".into(), counts.windows(2).all(|w| w[0] <= w[1]));
    if ok {
        Ok(())
    } else {
        Err(Failure::Validation(anyhow!("quadrature checks failed")))
    }
}

fn check_model(path: &Path) -> CliResult {
    let (model, cfg) =
        ModelFile::load(path).and_then(|f| f.build()).with_context(|| format!("loading {}", path.display()))?;
    let cloud = &model.cloud;
    let order = match cfg.integration {
        IntegrationScheme::Fixed { rule_order } => rule_order,
        IntegrationScheme::Adaptive(a) => a.rule_order,
    };
    let set = fixed_integration_set(cloud, &QuadratureRule::with_order(order).map_err(anyhow::Error::from)?);
    let mut points = set.points.clone();
    points.extend_from_slice(cloud.nodes());
    let report = check_admissibility(cloud, &points, &cfg.mmls);

    println!("{} nodes, {} cells, volume {:.6e} m^3", cloud.len(), cloud.cells().len(), cloud.volume());
    println!("influence radius {:.6e} m", cfg.mmls.radius);
    println!(
        "{} evaluation points: smallest support {} nodes, worst moment condition {:.3e}",
        points.len(),
        report.min_support(),
        report.worst_condition()
    );
    let flagged: Vec<_> = report.flagged().collect();
    for (i, p) in flagged.iter().take(20) {
        let kind = if p.insufficient { "fewer than 4 support nodes" } else { "coplanar support" };
        let what = if *i < set.len() { format!("integration point {i}") } else { format!("node {}", i - set.len()) };
        println!("  {what} at ({:.6e}, {:.6e}, {:.6e}): {kind} ({} nodes)", p.point.x, p.point.y, p.point.z, p.support_count);
    }
    if flagged.len() > 20 {
        println!("  ... {} more", flagged.len() - 20);
    }
    println!("wave-speed time step {:.6e} s (safety {} gives {:.6e} s; the solver also caps it by the highest mode)", critical_timestep(cloud, &model.material, 1.0), cfg.safety, critical_timestep(cloud, &model.material, cfg.safety));
    if !flagged.is_empty() {
        return Err(Failure::Validation(anyhow!("{} inadmissible evaluation points", flagged.len())));
    }

    let mmls = Mmls::new(cloud, cfg.mmls).map_err(anyhow::Error::from)?;
    let shapes = PointShapes::evaluate(&mmls, &set.points).map_err(anyhow::Error::from)?;
    match lump_mass(cloud.len(), &set, &shapes, cloud.density(), cfg.mass_lumping) {
        Ok(mass) => {
            let total: f64 = mass.iter().sum();
            let (lo, hi) = mass.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), m| (lo.min(*m), hi.max(*m)));
            println!(
                "lumped mass ({}): total {:.6e} kg (density x volume {:.6e}), per node [{:.3e}, {:.3e}] kg",
                cfg.mass_lumping.name(),
                total,
                cloud.density() * cloud.volume(),
                lo,
                hi
            );
            Ok(())
        }
        Err(e) => Err(Failure::Validation(anyhow!(e).context("lumped mass"))),
    }
}
