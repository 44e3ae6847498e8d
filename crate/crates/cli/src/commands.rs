use std::fmt::Write as _;
use std::fs::{File, OpenOptions};
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use clap::ArgMatches;
use raresir_core::ascii::{write_ascii_grid, AsciiGrid, DEFAULT_NODATA};
use raresir_core::ldp::{
    fit_rate_linear_with, iid_mean_tail, iid_mean_tail_adaptive, rate_curve, FitWeighting, IidDistribution,
    RateFit, SweepPoint,
};
use raresir_core::rare::{run_campaign, run_count_heuristic, replay_replicate, track_extremes, CampaignConfig};
use raresir_core::sampler::{derive_seed, jitter_points, JITTER_DOMAIN};
use raresir_core::scenario::{
    calibrated_tau_db, generate_synthetic, load_mask, load_pathloss_grid, write_mask, write_pathloss_grid, Rect,
    Scenario, SyntheticSpec,
};
use raresir_core::sir::threshold_lambda;
use raresir_core::SeedSpec;

use crate::args::*;
use crate::error::{CliError, CliResult};
use crate::manifest::RunManifest;

fn create(path: &Path) -> CliResult<File> {
    File::create(path).map_err(|e| CliError::file(path, e))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::file(path, e))
}

/// `<prefix><suffix>` without touching any existing extension.
fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// `dir/stem.csv` -> `dir/stem<suffix>`
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

fn weighting(w: Weighting) -> FitWeighting {
    match w {
        Weighting::Unweighted => FitWeighting::Unweighted,
        Weighting::InverseVariance => FitWeighting::InverseVariance,
    }
}

pub fn load_scenario(input: &ScenarioInput, manifest: &mut RunManifest) -> CliResult<Scenario<f64>> {
    let open = |p: &Path| File::open(p).map(BufReader::new).map_err(|e| CliError::file(p, e));
    let with_path = |p: &Path, e: raresir_core::Error| match CliError::from(e) {
        CliError::Data(m) => CliError::Data(format!("{}: {m}", p.display())),
        other => other,
    };
    let grid = load_pathloss_grid(open(&input.scenario)?).map_err(|e| with_path(&input.scenario, e))?;
    manifest.input(&input.scenario)?;
    let mask = match &input.mask {
        Some(p) => {
            let m = load_mask(open(p)?).map_err(|e| with_path(p, e))?;
            manifest.input(p)?;
            Some(m)
        }
        None => None,
    };
    let name = input
        .scenario
        .file_stem()
        .map(|s| s.to_string_lossy().trim_end_matches(".pathloss").to_string())
        .unwrap_or_default();
    Ok(Scenario::new(name, grid, mask)?)
}

fn resolve_tau(scenario: &Scenario<f64>, tau_db: Option<f64>, manifest: &mut RunManifest) -> CliResult<f64> {
    let tau = match tau_db {
        Some(t) => t,
        None => calibrated_tau_db(&scenario.intensity)?.value(),
    };
    manifest.set("tau_db", tau);
    manifest.set("tau_calibrated", tau_db.is_none());
    Ok(tau)
}

fn resolve_tail(n_tail: Option<u64>, auto_n: bool, lambda: f64) -> CliResult<u64> {
    match (n_tail, auto_n) {
        (Some(n), false) => Ok(n),
        (None, true) => Ok(run_count_heuristic(lambda)?),
        _ => Err(CliError::Usage("give exactly one of the tail count and --auto-n".into())),
    }
}

pub fn scenario_gen(a: &GenArgs, matches: &ArgMatches) -> CliResult<()> {
    let mut manifest = RunManifest::new("scenario gen", matches);
    let mut spec = SyntheticSpec::open(a.cols, a.rows, a.cell, a.alpha);
    spec.cell_height = a.cell_height.unwrap_or(a.cell);
    for &[x0, y0, x1, y1] in &a.obstacle {
        spec = spec.with_obstacle(Rect { x0, y0, x1, y1 });
    }
    let mut scenario = generate_synthetic(&spec)?;
    scenario.name = a.name.clone();
    let pl_path = a.out_dir.join(format!("{}.pathloss.asc", a.name));
    let mask_path = a.out_dir.join(format!("{}.mask.asc", a.name));
    write_pathloss_grid(&scenario.pathloss, create(&pl_path)?)?;
    write_mask(&scenario.mask, create(&mask_path)?)?;
    let tau = calibrated_tau_db(&scenario.intensity)?.value();
    manifest.set("output.pathloss", pl_path.display());
    manifest.set("output.mask", mask_path.display());
    manifest.set("free_tiles", scenario.intensity.free_tiles());
    manifest.set("calibrated_tau_db", tau);
    manifest.write_for(&a.out_dir.join(&a.name))?;
    println!("wrote {} and {}", pl_path.display(), mask_path.display());
    println!("calibrated tau: {tau:.3} dB");
    Ok(())
}

pub fn scenario_info(input: &ScenarioInput, matches: &ArgMatches) -> CliResult<()> {
    let mut manifest = RunManifest::new("scenario info", matches);
    let sc = load_scenario(input, &mut manifest)?;
    let g = sc.geometry();
    let free: Vec<f64> = sc.pathloss.values_db.iter().flatten().copied().collect();
    let (lo, hi) = free
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    println!("name: {}", sc.name);
    println!("grid: {} x {} tiles of {} x {}", g.n_cols, g.n_rows, g.cell_width, g.cell_height);
    println!("window: {} x {}", g.width(), g.height());
    println!("origin: {}, {}", g.origin.0, g.origin.1);
    println!("free tiles: {} of {}", sc.intensity.free_tiles(), g.n_tiles());
    println!("free area: {}", sc.intensity.total_mass);
    println!("path loss: {lo:.3} .. {hi:.3} dB");
    println!("calibrated tau: {:.3} dB", calibrated_tau_db(&sc.intensity)?.value());
    Ok(())
}

pub fn simulate(a: &SimulateArgs, matches: &ArgMatches) -> CliResult<()> {
    let c = &a.campaign;
    let mut manifest = RunManifest::new("simulate", matches);
    let sc = load_scenario(&c.input, &mut manifest)?;
    let tau_db = resolve_tau(&sc, c.tau_db, &mut manifest)?;
    let cfg = CampaignConfig {
        lambda: c.lambda,
        tau_db,
        eps: c.eps,
        n_mean: c.n_mean,
        n_tail: resolve_tail(c.n_tail, c.auto_n, c.lambda)?,
        master_seed: c.seed,
    };
    let r = run_campaign(&sc, &cfg, false, false)?;
    manifest.set("lambda", cfg.lambda);
    manifest.set("tau_lambda_db", r.threshold.tau_lambda_db);
    manifest.set("n_mean", cfg.n_mean);
    manifest.set("n_tail", cfg.n_tail);
    manifest.set("seed", cfg.master_seed);

    let fresh = std::fs::metadata(&a.out).map(|m| m.len() == 0).unwrap_or(true);
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&a.out)
        .map_err(|e| CliError::file(&a.out, e))?;
    let mut row = String::new();
    if fresh {
        row.push_str("lambda,tau_db,eps,mean,b,n,hits,p_hat,std_err\n");
    }
    let t = &r.tail;
    writeln!(row, "{},{},{},{},{},{},{},{},{}", cfg.lambda, tau_db, cfg.eps, r.mean.mean, r.b, t.n, t.hits, t.p_hat, t.std_err)
        .expect("string write");
    f.write_all(row.as_bytes()).map_err(|e| CliError::file(&a.out, e))?;
    manifest.write_for(&a.out)?;

    println!("tau_lambda: {:.3} dB", r.threshold.tau_lambda_db);
    println!("mean: {} (std err {})", r.mean.mean, r.mean.std_err);
    println!("b: {}", r.b);
    println!("p_hat: {} ({} of {}, std err {})", t.p_hat, t.hits, t.n, t.std_err);
    if let Some((lo, hi)) = t.small_count_interval() {
        println!("wilson 95%: [{lo}, {hi}]");
    }
    Ok(())
}

fn fmt_log(p: f64) -> String {
    if p > 0.0 {
        p.ln().to_string()
    } else {
        String::new()
    }
}

pub fn sweep(a: &SweepArgs, matches: &ArgMatches) -> CliResult<()> {
    let lambdas = &a.lambdas.0;
    if lambdas.len() < 2 {
        return Err(CliError::Usage("a sweep needs at least two densities".into()));
    }
    let mut manifest = RunManifest::new("sweep", matches);
    let sc = load_scenario(&a.input, &mut manifest)?;
    let tau_db = resolve_tau(&sc, a.tau_db, &mut manifest)?;

    let mut points = Vec::with_capacity(lambdas.len());
    let mut campaigns = String::from(
        "lambda,seed,tau_db,tau_lambda_db,eps,n_mean,mean,mean_std_err,b,n_tail,hits,p_hat,std_err,wilson_lo,wilson_hi\n",
    );
    for (k, &lambda) in lambdas.iter().enumerate() {
        let cfg = CampaignConfig {
            lambda,
            tau_db,
            eps: a.eps,
            n_mean: a.n_mean,
            n_tail: resolve_tail(a.n_tail, a.auto_n, lambda)?,
            master_seed: derive_seed(a.seed, k as u64),
        };
        let r = run_campaign(&sc, &cfg, false, false)?;
        let t = &r.tail;
        let (lo, hi) = t.wilson_interval();
        writeln!(
            campaigns,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            lambda, cfg.master_seed, tau_db, r.threshold.tau_lambda_db, a.eps, cfg.n_mean, r.mean.mean,
            r.mean.std_err, r.b, t.n, t.hits, t.p_hat, t.std_err, lo, hi
        )
        .expect("string write");
        log::info!("lambda {lambda}: {} of {} above b = {}", t.hits, t.n, r.b);
        points.push(SweepPoint::from_tail(lambda, t));
    }
    let campaigns_path = sibling(&a.out, ".campaigns.csv");
    write_text(&campaigns_path, &campaigns)?;

    let fit = fit_rate_linear_with(&points, weighting(a.weighting));
    let mut main = String::from("lambda,p_hat,std_err,log_p,fitted\n");
    for p in &points {
        let fitted = fit.as_ref().map(|f| f.fitted_log_p(p.lambda).to_string()).unwrap_or_default();
        writeln!(main, "{},{},{},{},{}", p.lambda, p.p_hat, p.std_err, fmt_log(p.p_hat), fitted).expect("string write");
    }
    write_text(&a.out, &main)?;

    let fit = match fit {
        Ok(f) => f,
        Err(e) => {
            manifest.set("fit", "skipped");
            manifest.write_for(&a.out)?;
            return Err(CliError::Numerical(format!("rate fit skipped: {e}")));
        }
    };
    let curve = rate_curve(&points)?;
    let mut fit_csv = String::from("lambda,log_p,fitted,residual\n");
    let mut rate_csv = String::from("lambda,rate_point,rate_curve\n");
    for p in points.iter().filter(|p| p.p_hat > 0.0) {
        let (lp, fitted) = (p.p_hat.ln(), fit.fitted_log_p(p.lambda));
        writeln!(fit_csv, "{},{},{},{}", p.lambda, lp, fitted, lp - fitted).expect("string write");
    }
    for &(lambda, point) in &curve.points {
        writeln!(rate_csv, "{},{},{}", lambda, point, fit.rate_curve_at(lambda)).expect("string write");
    }
    write_text(&sibling(&a.out, ".fit.csv"), &fit_csv)?;
    write_text(&sibling(&a.out, ".rate.csv"), &rate_csv)?;
    record_fit(&mut manifest, &fit);
    manifest.write_for(&a.out)?;
    print_fit(&fit);
    Ok(())
}

fn record_fit(manifest: &mut RunManifest, fit: &RateFit<f64>) {
    manifest.set("fit.p1", fit.p1);
    manifest.set("fit.p2", fit.p2);
    manifest.set("fit.r_squared", fit.r_squared);
    manifest.set("fit.residual_norm", fit.residual_norm);
    manifest.set("fit.points_used", fit.points_used);
    manifest.set("fit.rate_estimate", fit.rate_estimate());
    let excluded: Vec<String> = fit.excluded.iter().map(|x| x.to_string()).collect();
    manifest.set("fit.excluded", excluded.join(";"));
}

fn print_fit(fit: &RateFit<f64>) {
    println!("fit: log p = {} * x + {}", fit.p1, fit.p2);
    println!("r_squared: {}", fit.r_squared);
    println!("residual norm: {}", fit.residual_norm);
    println!("rate estimate: {}", fit.rate_estimate());
    if !fit.excluded.is_empty() {
        let ex: Vec<String> = fit.excluded.iter().map(|x| x.to_string()).collect();
        println!("excluded (no hits): {}", ex.join(", "));
    }
}

fn masked_grid(sc: &Scenario<f64>, values: impl Iterator<Item = Option<f64>>) -> AsciiGrid<f64> {
    AsciiGrid {
        geometry: *sc.geometry(),
        nodata: DEFAULT_NODATA,
        values: values
            .enumerate()
            .map(|(t, v)| match v {
                Some(v) if !sc.is_blocked(t) => v,
                _ => DEFAULT_NODATA,
            })
            .collect(),
    }
}

pub fn heatmap(a: &HeatmapArgs, matches: &ArgMatches) -> CliResult<()> {
    let mut manifest = RunManifest::new("heatmap", matches);
    let sc = load_scenario(&a.input, &mut manifest)?;
    let tau_db = resolve_tau(&sc, a.tau_db, &mut manifest)?;
    let cfg = CampaignConfig {
        lambda: a.lambda,
        tau_db,
        eps: a.eps,
        n_mean: a.n_mean,
        n_tail: resolve_tail(a.n, a.auto_n, a.lambda)?,
        master_seed: a.seed,
    };
    let r = run_campaign(&sc, &cfg, true, false)?;
    let heat = r.heatmap.expect("requested");
    manifest.set("lambda", cfg.lambda);
    manifest.set("tau_lambda_db", r.threshold.tau_lambda_db);
    manifest.set("n_mean", cfg.n_mean);
    manifest.set("n_tail", cfg.n_tail);
    manifest.set("mean", r.mean.mean);
    manifest.set("b", r.b);
    manifest.set("n_atypical", heat.n_atypical);
    println!("b: {}", r.b);
    println!("n_atypical: {} of {}", heat.n_atypical, cfg.n_tail);
    if heat.is_empty() {
        manifest.write_for(&a.out)?;
        return Err(CliError::Numerical(
            "no replicate exceeded b; no heat map written (raise --n or lower --eps)".into(),
        ));
    }
    let counts = masked_grid(&sc, heat.mean_counts.iter().map(|&v| Some(v)));
    let ratio = masked_grid(&sc, heat.ratio.iter().copied());
    let counts_path = with_suffix(&a.out, ".mean_counts.asc");
    let ratio_path = with_suffix(&a.out, ".ratio.asc");
    write_ascii_grid(&counts, create(&counts_path)?)?;
    write_ascii_grid(&ratio, create(&ratio_path)?)?;
    println!("conditional mass: {} (unconditional {})", heat.total_mean_mass(), cfg.lambda * sc.intensity.total_mass);
    manifest.write_for(&a.out)?;
    Ok(())
}

pub fn extremes(a: &ExtremesArgs, matches: &ArgMatches) -> CliResult<()> {
    if a.n == 0 {
        return Err(CliError::Usage("--n must be at least 1".into()));
    }
    let mut manifest = RunManifest::new("extremes", matches);
    let sc = load_scenario(&a.input, &mut manifest)?;
    let tau_db = resolve_tau(&sc, a.tau_db, &mut manifest)?;
    // Extremes need no mean phase; replicate indices run over 0..n.
    let cfg = CampaignConfig {
        lambda: a.lambda,
        tau_db,
        eps: 1.0,
        n_mean: 0,
        n_tail: a.n,
        master_seed: a.seed,
    };
    let threshold = threshold_lambda(tau_db, a.lambda)?;
    manifest.set("tau_lambda_db", threshold.tau_lambda_db);

    if let Some(idx) = a.replay {
        let (sample, o) = replay_replicate(&sc, &cfg, idx)?;
        println!(
            "replicate {idx}: {:.2}% connected ({} of {} users disconnected), digest {}",
            100.0 * o.connected_fraction,
            o.disconnected_users,
            o.total_users,
            raresir_core::rare::counts_digest(&sample.counts)
        );
        return Ok(());
    }

    let rec = track_extremes(&sc, &cfg)?;
    println!(
        "least: {:.2}% connected, most: {:.2}% connected",
        100.0 * rec.least.connected_fraction,
        100.0 * rec.most.connected_fraction
    );
    println!(
        "least replicate {} ({} users), most replicate {} ({} users), spread {}",
        rec.least.replicate_index,
        rec.least.total_users,
        rec.most.replicate_index,
        rec.most.total_users,
        rec.spread()
    );
    if let Some(out) = &a.out {
        let mut summary = String::from("which,replicate_index,total_users,disconnected_users,connected_fraction,digest\n");
        let jitter_master = derive_seed(a.seed, JITTER_DOMAIN);
        for (which, s) in [("least", &rec.least), ("most", &rec.most)] {
            writeln!(
                summary,
                "{which},{},{},{},{},{}",
                s.replicate_index, s.total_users, s.disconnected_users, s.connected_fraction, s.digest
            )
            .expect("string write");
            let pts = jitter_points(sc.geometry(), &s.sample, SeedSpec::new(jitter_master, s.replicate_index));
            let mut csv = String::from("x,y\n");
            for (x, y) in pts {
                writeln!(csv, "{x},{y}").expect("string write");
            }
            write_text(&with_suffix(out, &format!(".{which}.csv")), &csv)?;
        }
        write_text(&with_suffix(out, ".csv"), &summary)?;
        manifest.set("least.replicate_index", rec.least.replicate_index);
        manifest.set("most.replicate_index", rec.most.replicate_index);
        manifest.write_for(out)?;
    }
    Ok(())
}

pub fn oracle(a: &OracleArgs, matches: &ArgMatches) -> CliResult<()> {
    let mut manifest = RunManifest::new("oracle", matches);
    let dist = match a.dist {
        Dist::Exp => IidDistribution::Exponential { mean: a.m.unwrap_or(1.0) },
        Dist::Gauss => IidDistribution::Gaussian {
            mean: a.m.unwrap_or(0.0),
            sigma: a.sigma,
        },
    };
    dist.validate()?;
    let analytic = dist.rate(a.s)?;
    let sizes = &a.n_list.0;
    if sizes.is_empty() {
        return Err(CliError::Usage("--n-list is empty".into()));
    }
    let mut points = Vec::with_capacity(sizes.len());
    let mut unmet = Vec::new();
    for &n in sizes {
        let est = match (a.reps, a.target_rel_se) {
            (Some(reps), None) => iid_mean_tail(dist, n, a.s, reps, a.seed)?,
            (None, Some(target)) => {
                let ad = iid_mean_tail_adaptive(dist, n, a.s, target, a.initial_reps, a.max_reps, a.seed)?;
                if !ad.target_met {
                    unmet.push(n);
                }
                ad.estimate
            }
            _ => return Err(CliError::Usage("give exactly one of --reps and --target-rel-se".into())),
        };
        points.push(SweepPoint::from_tail(n as f64, &est));
    }
    let fit = fit_rate_linear_with(&points, weighting(a.weighting));

    let mut csv = String::from("n,reps,hits,p_hat,std_err,log_p,fitted\n");
    for p in &points {
        let fitted = fit.as_ref().map(|f| f.fitted_log_p(p.lambda).to_string()).unwrap_or_default();
        let hits = (p.p_hat * p.n as f64).round() as u64;
        writeln!(csv, "{},{},{},{},{},{},{}", p.lambda, p.n, hits, p.p_hat, p.std_err, fmt_log(p.p_hat), fitted)
            .expect("string write");
    }
    if let Some(out) = &a.out {
        write_text(out, &csv)?;
    } else {
        print!("{csv}");
    }
    let unmet_list: Vec<String> = unmet.iter().map(|n| n.to_string()).collect();
    manifest.set("analytic_rate", analytic);
    manifest.set("target_unmet", unmet_list.join(";"));
    println!("analytic rate: {analytic}");
    if !unmet.is_empty() {
        println!("std err target not met at n = {}", unmet_list.join(", "));
    }
    let fit = match fit {
        Ok(f) => f,
        Err(e) => {
            if let Some(out) = &a.out {
                manifest.write_for(out)?;
            }
            return Err(CliError::Numerical(format!("rate fit skipped: {e}")));
        }
    };
    let est = fit.rate_estimate();
    let rel = if analytic != 0.0 { ((est - analytic) / analytic).abs() } else { est.abs() };
    println!("estimated rate: {est}");
    println!("relative error: {rel}");
    record_fit(&mut manifest, &fit);
    manifest.set("relative_error", rel);
    if let Some(out) = &a.out {
        manifest.write_for(out)?;
    }
    Ok(())
}
